use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spline::KnotGrid;
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// One KAN layer: every edge `(i, j)` carries
/// `φᵢⱼ(x) = w_b[i,j]·SiLU(x) + w_s[i,j]·Σₘ c[i,j,m]·Bₘ(x)` and output `j`
/// sums its incoming edges.
#[derive(Clone, Debug, PartialEq)]
pub struct KanLayer {
    pub grid: KnotGrid,
    /// `[d_in × d_out × (G + k)]`
    pub coeffs: Tensor,
    /// `[d_in × d_out]`
    pub base_weight: Tensor,
    /// `[d_in × d_out]`
    pub spline_weight: Tensor,
}

/// Layer parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct KanLayerVars {
    pub coeffs: Var,
    pub base_weight: Var,
    pub spline_weight: Var,
}

impl KanLayer {
    pub fn from_parts(grid: KnotGrid, coeffs: Tensor, base_weight: Tensor, spline_weight: Tensor) -> Result<Self> {
        let ws = base_weight.shape().to_vec();
        if ws.len() != 2 || spline_weight.shape() != ws.as_slice() || coeffs.shape() != [ws[0], ws[1], grid.basis_len()]
        {
            return Err(Error::dim(format!(
                "inconsistent KAN parameters: coeffs {:?}, w_b {:?}, w_s {:?}, basis {}",
                coeffs.shape(),
                base_weight.shape(),
                spline_weight.shape(),
                grid.basis_len()
            )));
        }
        Ok(KanLayer {
            grid,
            coeffs,
            base_weight,
            spline_weight,
        })
    }

    pub fn zeros(d_in: usize, d_out: usize, grid: KnotGrid) -> Self {
        let nb = grid.basis_len();
        KanLayer {
            coeffs: Tensor::zeros(&[d_in, d_out, nb]),
            base_weight: Tensor::zeros(&[d_in, d_out]),
            spline_weight: Tensor::zeros(&[d_in, d_out]),
            grid,
        }
    }

    /// Seeded initialization: `c ~ N(0, 0.1/√(G+k))`, `w_b ~ N(0, 1/d_in)`,
    /// `w_s = 1`.
    pub fn init(d_in: usize, d_out: usize, grid: KnotGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = grid.basis_len();
        let c_dist = Normal::new(0.0, 0.1 / (nb as f64).sqrt()).unwrap();
        let b_dist = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).unwrap();
        let coeffs = Tensor::from_fn(&[d_in, d_out, nb], |_| c_dist.sample(&mut rng));
        let base_weight = Tensor::from_fn(&[d_in, d_out], |_| b_dist.sample(&mut rng));
        KanLayer {
            coeffs,
            base_weight,
            spline_weight: Tensor::full(&[d_in, d_out], 1.0),
            grid,
        }
    }

    pub fn d_in(&self) -> usize {
        self.base_weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.base_weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> KanLayerVars {
        KanLayerVars {
            coeffs: tape.leaf(self.coeffs.clone(), trainable),
            base_weight: tape.leaf(self.base_weight.clone(), trainable),
            spline_weight: tape.leaf(self.spline_weight.clone(), trainable),
        }
    }

    /// `[B × d_in] → [B × d_out]` on a tape.
    pub fn forward(&self, tape: &mut Tape, vars: &KanLayerVars, x: Var) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.d_in() {
            return Err(Error::dim(format!(
                "KAN layer expects [B×{}], got {:?}",
                self.d_in(),
                xs
            )));
        }
        let act = tape.silu(x);
        let base = tape.matmul(act, vars.base_weight)?;
        let op = SplineEdges {
            grid: self.grid.clone(),
        };
        let out = op.forward(tape.value(x), tape.value(vars.coeffs), tape.value(vars.spline_weight));
        let spline = tape.custom(&[x, vars.coeffs, vars.spline_weight], out, Box::new(op));
        tape.add(base, spline)
    }

    /// Tape-free evaluation.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("coeffs", &self.coeffs),
            ("base_weight", &self.base_weight),
            ("spline_weight", &self.spline_weight),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.coeffs, &mut self.base_weight, &mut self.spline_weight]
    }
}

/// `out[b, j] = Σᵢ w_s[i,j]·Σₘ c[i,j,m]·Bₘ(x[b,i])`.
#[derive(Debug)]
struct SplineEdges {
    grid: KnotGrid,
}

impl SplineEdges {
    fn forward(&self, x: &Tensor, coeffs: &Tensor, spline_weight: &Tensor) -> Tensor {
        let (batch, d_in) = (x.shape()[0], x.shape()[1]);
        let d_out = spline_weight.shape()[1];
        let nb = self.grid.basis_len();
        let k = self.grid.order();
        let (c, ws) = (coeffs.data(), spline_weight.data());
        let mut out = vec![0.0; batch * d_out];
        let mut vals = [0.0f64; 16];
        let mut ders = [0.0f64; 16];
        for b in 0..batch {
            let orow = &mut out[b * d_out..(b + 1) * d_out];
            for i in 0..d_in {
                let start = self.grid.eval_local(x.data()[b * d_in + i], &mut vals, &mut ders);
                for (j, o) in orow.iter_mut().enumerate() {
                    let cbase = (i * d_out + j) * nb + start;
                    let mut s = 0.0;
                    for r in 0..=k {
                        s += c[cbase + r] * vals[r];
                    }
                    *o += ws[i * d_out + j] * s;
                }
            }
        }
        Tensor::new(vec![batch, d_out], out).expect("shape computed above")
    }
}

impl CustomOp for SplineEdges {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, coeffs, spline_weight) = (inputs[0], inputs[1], inputs[2]);
        let (batch, d_in) = (x.shape()[0], x.shape()[1]);
        let d_out = spline_weight.shape()[1];
        let nb = self.grid.basis_len();
        let k = self.grid.order();
        let (c, ws) = (coeffs.data(), spline_weight.data());

        let mut dx = needs[0].then(|| vec![0.0; x.numel()]);
        let mut dc = needs[1].then(|| vec![0.0; coeffs.numel()]);
        let mut dws = needs[2].then(|| vec![0.0; spline_weight.numel()]);
        let mut vals = [0.0f64; 16];
        let mut ders = [0.0f64; 16];
        for b in 0..batch {
            let grow = &g[b * d_out..(b + 1) * d_out];
            for i in 0..d_in {
                let start = self.grid.eval_local(x.data()[b * d_in + i], &mut vals, &mut ders);
                let mut dxi = 0.0;
                for (j, &gj) in grow.iter().enumerate() {
                    let e = i * d_out + j;
                    let cbase = e * nb + start;
                    let (mut s, mut sd) = (0.0, 0.0);
                    for r in 0..=k {
                        s += c[cbase + r] * vals[r];
                        sd += c[cbase + r] * ders[r];
                    }
                    dxi += gj * ws[e] * sd;
                    if let Some(dc) = dc.as_mut() {
                        let scale = gj * ws[e];
                        for r in 0..=k {
                            dc[cbase + r] += scale * vals[r];
                        }
                    }
                    if let Some(dws) = dws.as_mut() {
                        dws[e] += gj * s;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    dx[b * d_in + i] += dxi;
                }
            }
        }
        vec![dx, dc, dws]
    }
}

/// Composition of KAN layers, applied first to last.
#[derive(Clone, Debug, PartialEq)]
pub struct KanStack {
    layers: Vec<KanLayer>,
}

impl KanStack {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("a KAN stack needs at least one layer"));
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::dim(format!(
                    "layer {idx} outputs {} features but layer {} expects {}",
                    pair[0].d_out(),
                    idx + 1,
                    pair[1].d_in()
                )));
            }
        }
        Ok(KanStack { layers })
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<KanLayerVars> {
        self.layers.iter().map(|l| l.bind(tape, trainable)).collect()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[KanLayerVars], x: Var) -> Result<Var> {
        self.layers
            .iter()
            .zip(vars)
            .try_fold(x, |h, (layer, v)| layer.forward(tape, v, h))
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

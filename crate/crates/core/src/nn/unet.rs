//! Conditional 1-D U-Net over action sequences.

use super::graph::{Graph, NodeId};
use super::params::{bias_uniform, kaiming_uniform_slope, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetSpec {
    pub action_dim: usize,
    pub horizon: usize,
    /// Width of the flattened observation history.
    pub cond_dim: usize,
    pub widths: [usize; 2],
    pub kernel: usize,
    pub emb_dim: usize,
    pub group_size: usize,
}

impl UNetSpec {
    pub fn new(action_dim: usize, horizon: usize, cond_dim: usize) -> Self {
        Self { action_dim, horizon, cond_dim, widths: [32, 64], kernel: 5, emb_dim: 32, group_size: 8 }
    }

    pub fn film_dim(&self) -> usize {
        self.emb_dim + self.cond_dim
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Shape(m));
        if self.horizon == 0 || self.horizon % 4 != 0 {
            return err(format!("horizon {} must be a positive multiple of 4", self.horizon));
        }
        if self.kernel % 2 == 0 {
            return err(format!("kernel {} must be odd", self.kernel));
        }
        if self.widths.iter().any(|w| *w == 0 || w % self.group_size != 0) {
            return err(format!("widths {:?} must be multiples of group size {}", self.widths, self.group_size));
        }
        if self.action_dim == 0 || self.emb_dim < 4 || self.emb_dim % 2 != 0 {
            return err("action_dim must be >= 1 and emb_dim even and >= 4".into());
        }
        Ok(())
    }

    /// Residual blocks as (name, in, out).
    fn blocks(&self) -> Vec<(String, usize, usize)> {
        let [c0, c1] = self.widths;
        vec![
            ("enc0.0".into(), self.action_dim, c0),
            ("enc0.1".into(), c0, c0),
            ("enc1.0".into(), c0, c1),
            ("enc1.1".into(), c1, c1),
            ("mid.0".into(), c1, c1),
            ("mid.1".into(), c1, c1),
            ("dec1.0".into(), 2 * c1, c1),
            ("dec1.1".into(), c1, c1),
            ("dec0.0".into(), c1 + c0, c0),
            ("dec0.1".into(), c0, c0),
        ]
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore, NnError> {
        self.validate()?;
        let mut s = ParamStore::new();
        let k = self.kernel;
        let [c0, c1] = self.widths;
        for (name, cin, cout) in self.blocks() {
            add_conv(&mut s, &format!("{name}.conv1"), cin, cout, k, rng)?;
            add_norm(&mut s, &format!("{name}.norm1"), cout)?;
            add_conv(&mut s, &format!("{name}.conv2"), cout, cout, k, rng)?;
            add_norm(&mut s, &format!("{name}.norm2"), cout)?;
            let fd = self.film_dim();
            s.insert(&format!("{name}.film.w"), kaiming_uniform_slope(&[2 * cout, fd], fd, INIT_SLOPE, rng))?;
            let mut b = vec![0.0; 2 * cout];
            b[..cout].fill(1.0);
            s.insert(&format!("{name}.film.b"), Tensor::from_vec(b))?;
            if cin != cout {
                add_conv(&mut s, &format!("{name}.res"), cin, cout, 1, rng)?;
            }
        }
        // Timestep encoder: emb -> 4·emb -> emb.
        let (e, e4) = (self.emb_dim, 4 * self.emb_dim);
        s.insert("temb.l1.w", kaiming_uniform_slope(&[e4, e], e, INIT_SLOPE, rng))?;
        s.insert("temb.l1.b", bias_uniform(e4, e, rng))?;
        s.insert("temb.l2.w", kaiming_uniform_slope(&[e, e4], e4, INIT_SLOPE, rng))?;
        s.insert("temb.l2.b", bias_uniform(e, e4, rng))?;
        add_conv(&mut s, "down0", c0, c0, 3, rng)?;
        add_conv(&mut s, "down1", c1, c1, 3, rng)?;
        add_conv(&mut s, "up1", c1, c1, 3, rng)?;
        add_conv(&mut s, "up0", c1, c1, 3, rng)?;
        add_conv(&mut s, "final.conv", c0, c0, k, rng)?;
        add_norm(&mut s, "final.norm", c0)?;
        add_conv(&mut s, "final.out", c0, self.action_dim, 1, rng)?;
        Ok(s)
    }
}

/// Slope for the U-Net's Kaiming init; keeps the fresh output small next to unit noise.
const INIT_SLOPE: f64 = 2.236_067_977_499_79;

fn add_conv<R: Rng + ?Sized>(s: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Result<(), NnError> {
    s.insert(&format!("{name}.w"), kaiming_uniform_slope(&[cout, k, cin], k * cin, INIT_SLOPE, rng))?;
    s.insert(&format!("{name}.b"), bias_uniform(cout, k * cin, rng))
}

fn add_norm(s: &mut ParamStore, name: &str, c: usize) -> Result<(), NnError> {
    s.insert(&format!("{name}.g"), Tensor::full(&[c], 1.0))?;
    s.insert(&format!("{name}.b"), Tensor::zeros(&[c]))
}

pub const GROUP_NORM_EPS: f64 = 1e-8;

struct Ctx<'a, 'p> {
    g: &'a mut Graph<'p>,
    s: &'p ParamStore,
    spec: &'a UNetSpec,
}

impl<'p> Ctx<'_, 'p> {
    fn conv(&mut self, name: &str, x: NodeId, stride: usize) -> Result<NodeId, NnError> {
        let w = self.g.param(self.s, &format!("{name}.w"))?;
        let b = self.g.param(self.s, &format!("{name}.b"))?;
        let k = self.g.value(w).shape()[1];
        self.g.conv1d(x, w, Some(b), stride, k / 2)
    }

    fn norm_mish(&mut self, name: &str, x: NodeId) -> Result<NodeId, NnError> {
        let gm = self.g.param(self.s, &format!("{name}.g"))?;
        let bt = self.g.param(self.s, &format!("{name}.b"))?;
        let n = self.g.group_norm(x, gm, bt, self.spec.group_size, GROUP_NORM_EPS)?;
        Ok(self.g.mish(n))
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, x: NodeId, cond: NodeId) -> Result<NodeId, NnError> {
        let h = self.conv(&format!("{name}.conv1"), x, 1)?;
        let h = self.norm_mish(&format!("{name}.norm1"), h)?;
        let fw = self.g.param(self.s, &format!("{name}.film.w"))?;
        let fb = self.g.param(self.s, &format!("{name}.film.b"))?;
        let f = self.g.linear(cond, fw, Some(fb))?;
        let h = self.g.film(h, f)?;
        let h = self.conv(&format!("{name}.conv2"), h, 1)?;
        let h = self.norm_mish(&format!("{name}.norm2"), h)?;
        let skip = if cin != cout { self.conv(&format!("{name}.res"), x, 1)? } else { x };
        self.g.add(h, skip)
    }
}

/// Predicted noise `[B, horizon, action_dim]` for noisy actions `x`,
/// flattened observation history `cond: [B, cond_dim]` and timesteps `t: [B]`.
pub fn forward_unet<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    spec: &UNetSpec,
    x: NodeId,
    cond: NodeId,
    t: NodeId,
) -> Result<NodeId, NnError> {
    let xs = g.value(x).shape().to_vec();
    if xs.len() != 3 || xs[1] != spec.horizon || xs[2] != spec.action_dim {
        return Err(NnError::Shape(format!("unet input {xs:?}, expected [B, {}, {}]", spec.horizon, spec.action_dim)));
    }
    let b = xs[0];
    if g.value(cond).shape() != [b, spec.cond_dim] || g.value(t).shape() != [b] {
        return Err(NnError::Shape(format!(
            "unet conditioning {:?} / timesteps {:?} for batch {b}",
            g.value(cond).shape(),
            g.value(t).shape()
        )));
    }
    let emb = g.sin_emb(t, spec.emb_dim)?;
    let (w1, b1) = (g.param(store, "temb.l1.w")?, g.param(store, "temb.l1.b")?);
    let (w2, b2) = (g.param(store, "temb.l2.w")?, g.param(store, "temb.l2.b")?);
    let h = g.linear(emb, w1, Some(b1))?;
    let h = g.mish(h);
    let emb = g.linear(h, w2, Some(b2))?;
    let full = g.concat(&[emb, cond])?;
    let cond = g.mish(full);
    let blocks = spec.blocks();
    let mut c = Ctx { g, s: store, spec };
    let run = |c: &mut Ctx<'_, 'p>, i: usize, h: NodeId| {
        let (name, cin, cout) = &blocks[i];
        c.block(name, *cin, *cout, h, cond)
    };
    let h = run(&mut c, 0, x)?;
    let skip0 = run(&mut c, 1, h)?;
    let h = c.conv("down0", skip0, 2)?;
    let h = run(&mut c, 2, h)?;
    let skip1 = run(&mut c, 3, h)?;
    let h = c.conv("down1", skip1, 2)?;
    let h = run(&mut c, 4, h)?;
    let h = run(&mut c, 5, h)?;
    let h = c.g.upsample(h)?;
    let h = c.conv("up1", h, 1)?;
    let h = c.g.concat(&[h, skip1])?;
    let h = run(&mut c, 6, h)?;
    let h = run(&mut c, 7, h)?;
    let h = c.g.upsample(h)?;
    let h = c.conv("up0", h, 1)?;
    let h = c.g.concat(&[h, skip0])?;
    let h = run(&mut c, 8, h)?;
    let h = run(&mut c, 9, h)?;
    let h = c.conv("final.conv", h, 1)?;
    let h = c.norm_mish("final.norm", h)?;
    c.conv("final.out", h, 1)
}

/// Forward pass without keeping the graph.
pub fn unet_apply(store: &ParamStore, spec: &UNetSpec, x: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let xn = g.input(x.clone());
    let cn = g.input(cond.clone());
    let tn = g.input(Tensor::from_vec(t.to_vec()));
    let y = forward_unet(&mut g, store, spec, xn, cn, tn)?;
    Ok(g.value(y).clone())
}

//! Regression and attention-consistency losses, as plain functions on
//! slices and as differentiable graph builders.

use crate::error::{Error, Result};
use crate::model::erea::{flip_align, flip_align_tensor};
use crate::numerics::{Graph, Tensor, Var};

/// Added inside the square root of the Pearson denominator.
pub const PEARSON_EPS: f64 = 1e-8;

fn check_pair(y: &[f64], z: &[f64], op: &str) -> Result<()> {
    if y.len() != z.len() {
        return Err(Error::invalid(format!("{op}: lengths differ ({} vs {})", y.len(), z.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid(format!("{op}: empty signals")));
    }
    Ok(())
}

pub fn l1_loss(y: &[f64], z: &[f64]) -> Result<f64> {
    check_pair(y, z, "l1_loss")?;
    Ok(y.iter().zip(z).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `1 - rho(y, z)` with
/// `rho = (T sum yz - sum y sum z) / sqrt((T sum y^2 - (sum y)^2)(T sum z^2 - (sum z)^2) + eps)`,
/// the sums taken about the means.
pub fn neg_pearson_loss(y: &[f64], z: &[f64]) -> Result<f64> {
    check_pair(y, z, "neg_pearson_loss")?;
    if y.len() < 2 {
        return Err(Error::invalid("neg_pearson_loss: need at least 2 samples"));
    }
    let t = y.len() as f64;
    let my = y.iter().sum::<f64>() / t;
    let mz = z.iter().sum::<f64>() / t;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(z) {
        let (dy, dz) = (a - my, b - mz);
        sxy += dy * dz;
        sxx += dy * dy;
        syy += dz * dz;
    }
    Ok(1.0 - t * sxy / (t * t * sxx * syy + PEARSON_EPS).sqrt())
}

pub fn regression_loss(y: &[f64], z: &[f64], alpha: f64) -> Result<f64> {
    Ok((1.0 - alpha) * l1_loss(y, z)? + alpha * neg_pearson_loss(y, z)?)
}

/// Mean over `(t, e)` of `|| m[t,e] - flip_align(m_flipped)[t,e] ||_2`,
/// divided by the map area `Hq * Wq`, i.e. the sum of norms over
/// `T * E * Hq * Wq`.
pub fn attention_consistency_loss(m: &Tensor, m_flipped: &Tensor) -> Result<f64> {
    if m.shape() != m_flipped.shape() {
        return Err(Error::shape(
            "attention_consistency_loss",
            format!("{:?} vs {:?}", m.shape(), m_flipped.shape()),
        ));
    }
    let aligned = flip_align_tensor(m_flipped)?;
    let s = m.shape();
    let area = s[2] * s[3];
    let mut total = 0.0;
    for (a, b) in m.data().chunks(area).zip(aligned.data().chunks(area)) {
        total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    Ok(total / m.numel() as f64)
}

pub fn total_loss(reg_orig: f64, reg_flip: f64, ac: f64, beta: f64) -> f64 {
    (1.0 - beta) * (reg_orig + reg_flip) / 2.0 + beta * ac
}

/// Differentiable counterparts; every builder returns a scalar node.
pub mod graph {
    use super::*;

    fn check_signals(g: &Graph, y: Var, z: Var, op: &'static str) -> Result<usize> {
        let (sy, sz) = (g.shape(y), g.shape(z));
        if sy.len() != 1 || sy != sz {
            return Err(Error::shape(op, format!("{sy:?} vs {sz:?}")));
        }
        Ok(sy[0])
    }

    pub fn l1(g: &mut Graph, y: Var, z: Var) -> Result<Var> {
        check_signals(g, y, z, "l1_loss")?;
        let d = g.sub(y, z)?;
        let a = g.abs(d)?;
        g.mean(a)
    }

    fn centred(g: &mut Graph, x: Var) -> Result<Var> {
        let m = g.mean(x)?;
        let neg = g.scale(m, -1.0)?;
        g.add_broadcast(x, neg)
    }

    pub fn neg_pearson(g: &mut Graph, y: Var, z: Var) -> Result<Var> {
        let t = check_signals(g, y, z, "neg_pearson_loss")?;
        if t < 2 {
            return Err(Error::invalid("neg_pearson_loss: need at least 2 samples"));
        }
        let yc = centred(g, y)?;
        let zc = centred(g, z)?;
        let p = g.mul(yc, zc)?;
        let sxy = g.sum(p)?;
        let yy = g.square(yc)?;
        let sxx = g.sum(yy)?;
        let zz = g.square(zc)?;
        let syy = g.sum(zz)?;
        let prod = g.mul(sxx, syy)?;
        let tf = t as f64;
        let rad = g.scale(prod, tf * tf)?;
        let rad = g.add_const(rad, PEARSON_EPS)?;
        let den = g.sqrt(rad)?;
        let rho = g.div(sxy, den)?;
        let neg = g.scale(rho, -tf)?;
        g.add_const(neg, 1.0)
    }

    pub fn regression(g: &mut Graph, y: Var, z: Var, alpha: f64) -> Result<Var> {
        let l1 = l1(g, y, z)?;
        let np = neg_pearson(g, y, z)?;
        let a = g.scale(l1, 1.0 - alpha)?;
        let b = g.scale(np, alpha)?;
        g.add(a, b)
    }

    pub fn attention_consistency(g: &mut Graph, m: Var, m_flipped: Var) -> Result<Var> {
        let s = g.shape(m).to_vec();
        if s != g.shape(m_flipped) {
            return Err(Error::shape(
                "attention_consistency_loss",
                format!("{s:?} vs {:?}", g.shape(m_flipped)),
            ));
        }
        let aligned = flip_align(g, m_flipped)?;
        let d = g.sub(m, aligned)?;
        let rows = g.reshape(d, &[s[0] * s[1], s[2] * s[3]])?;
        let norms = g.row_l2_norm(rows)?;
        let total = g.sum(norms)?;
        g.scale(total, 1.0 / s.iter().product::<usize>() as f64)
    }

    pub fn total(g: &mut Graph, reg_orig: Var, reg_flip: Var, ac: Var, beta: f64) -> Result<Var> {
        let r = g.add(reg_orig, reg_flip)?;
        let r = g.scale(r, (1.0 - beta) / 2.0)?;
        let a = g.scale(ac, beta)?;
        g.add(r, a)
    }
}

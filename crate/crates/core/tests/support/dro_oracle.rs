//! Primal brute force for sup_{Q∈U} E_Q[ℓ]: projected-gradient ascent over
//! reweightings, with the Euclidean projection onto
//! {simplex} ∩ {Σ ĥⱼ φ(wⱼ/ĥⱼ) ≤ ρ} computed by Dykstra's algorithm.

use bvld::extensions::{AmbiguitySet, Divergence};

fn project_simplex(z: &[f64]) -> Vec<f64> {
    let mut u = z.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    z.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// argmin_{w≥0} ½(w − z)² + ν ĥ φ(w/ĥ).
fn prox_coordinate(div: Divergence, z: f64, h: f64, nu: f64) -> f64 {
    if nu == 0.0 {
        return z.max(0.0);
    }
    match div {
        Divergence::ChiSquared => ((z + 2.0 * nu) / (1.0 + 2.0 * nu / h)).max(0.0),
        Divergence::Kl => {
            // w = e^t solves e^t − z + ν(t − ln ĥ) = 0; the left side is
            // increasing and convex in t, so Newton from the right is monotone.
            let f = |t: f64| t.exp() - z + nu * (t - h.ln());
            let mut t = (z.max(h) + 1.0).ln();
            while f(t) < 0.0 {
                t += 1.0;
            }
            for _ in 0..200 {
                let step = f(t) / (t.exp() + nu);
                t -= step;
                if step.abs() <= 1e-15 * (1.0 + t.abs()) {
                    break;
                }
            }
            t.exp()
        }
    }
}

fn divergence(amb: &AmbiguitySet, w: &[f64]) -> f64 {
    amb.divergence_of(w)
}

fn project_ball(amb: &AmbiguitySet, z: &[f64]) -> Vec<f64> {
    let h = &amb.weights;
    let at = |nu: f64| -> Vec<f64> {
        z.iter()
            .zip(h)
            .map(|(&zj, &hj)| prox_coordinate(amb.divergence, zj, hj, nu))
            .collect()
    };
    let w0 = at(0.0);
    if divergence(amb, &w0) <= amb.rho {
        return w0;
    }
    let mut hi = 1.0;
    while divergence(amb, &at(hi)) > amb.rho {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if divergence(amb, &at(mid)) > amb.rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

fn project(amb: &AmbiguitySet, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut x = z.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for _ in 0..2000 {
        let y = project_simplex(&(0..n).map(|i| x[i] + p[i]).collect::<Vec<_>>());
        p = (0..n).map(|i| x[i] + p[i] - y[i]).collect();
        let x_new = project_ball(amb, &(0..n).map(|i| y[i] + q[i]).collect::<Vec<_>>());
        q = (0..n).map(|i| y[i] + q[i] - x_new[i]).collect();
        let change: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        let gap: f64 = x_new.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        x = x_new;
        if change < 1e-14 && gap < 1e-12 {
            break;
        }
    }
    x
}

/// Best E_w[ℓ] found by projected-gradient ascent from the nominal weights.
pub fn primal_sup(amb: &AmbiguitySet, loss: &[f64]) -> f64 {
    let spread = loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let step = 10.0 / spread.max(1e-12);
    let mut w = amb.weights.clone();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..300 {
        let z: Vec<f64> = w.iter().zip(loss).map(|(a, l)| a + step * l).collect();
        w = project(amb, &z);
        let v: f64 = w.iter().zip(loss).map(|(a, l)| a * l).sum();
        if v <= best + 1e-15 * best.abs() {
            break;
        }
        best = best.max(v);
    }
    best
}

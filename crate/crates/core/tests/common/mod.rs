//! Independent reference implementations and small fixtures shared by the
//! integration tests.

#![allow(dead_code)]

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrefine::nn::ParamStore;
use segrefine::phantom::{MmRange, PhantomSpec, RadiusRanges};

/// A 16³ phantom small enough for tests, with tumors scaled to fit.
pub fn small_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [16, 16, 16],
        seed,
        radius_range: RadiusRanges {
            necrotic: MmRange::new(1.5, 2.0),
            core: MmRange::new(2.8, 3.2),
            whole: MmRange::new(4.0, 4.5),
        },
        levels: 2,
        ..Default::default()
    }
}

/// Dice straight from the definition.
pub fn dice_oracle(p: &Array3<u8>, g: &Array3<u8>) -> f64 {
    let mut inter = 0usize;
    let mut sp = 0usize;
    let mut sg = 0usize;
    for (a, b) in p.iter().zip(g.iter()) {
        inter += (*a & *b) as usize;
        sp += *a as usize;
        sg += *b as usize;
    }
    if sp + sg == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sp + sg) as f64
    }
}

fn surface(m: &Array3<u8>) -> Vec<[usize; 3]> {
    let (d, w, h) = m.dim();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..w {
            for k in 0..h {
                if m[[i, j, k]] == 0 {
                    continue;
                }
                let edge = i == 0 || j == 0 || k == 0 || i + 1 == d || j + 1 == w || k + 1 == h;
                let hole = !edge
                    && (m[[i - 1, j, k]] == 0
                        || m[[i + 1, j, k]] == 0
                        || m[[i, j - 1, k]] == 0
                        || m[[i, j + 1, k]] == 0
                        || m[[i, j, k - 1]] == 0
                        || m[[i, j, k + 1]] == 0);
                if edge || hole {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

fn q95(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 0.95 * (v.len() as f64 - 1.0);
    let below = rank.floor();
    let i = below as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] * (1.0 - (rank - below)) + v[i + 1] * (rank - below)
}

/// HD95 by exhaustive pairwise search over surface voxels.
pub fn hd95_oracle(p: &Array3<u8>, g: &Array3<u8>, spacing: [f64; 3]) -> f64 {
    let (sp, sg) = (surface(p), surface(g));
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 373.13,
        _ => {}
    }
    let dist = |a: &[usize; 3], b: &[usize; 3]| {
        (0..3)
            .map(|ax| ((a[ax] as f64 - b[ax] as f64) * spacing[ax]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let nearest = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter()
            .map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
            .collect()
    };
    q95(nearest(&sp, &sg)).max(q95(nearest(&sg, &sp)))
}

/// Central-difference check (step 1e-3) of `grads` against `loss` on 12
/// sampled entries with a non-negligible analytic gradient. Returns the
/// number checked and the worst relative error.
pub fn check_params(
    store: &ParamStore<f64>,
    grads: &[Vec<f64>],
    seed: u64,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = store.iter().map(|p| p.data.len()).collect();
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut tries = 0;
    let base = loss(store);
    while checked < 12 && tries < 2000 {
        tries += 1;
        let pi = rng.random_range(0..sizes.len());
        let ei = rng.random_range(0..sizes[pi]);
        let analytic = grads[pi][ei];
        if analytic.abs() < 1e-6 {
            continue;
        }
        let h = 1e-3;
        let mut s = store.clone();
        s.iter_mut().nth(pi).unwrap().data[ei] += h;
        let up = loss(&s);
        s.iter_mut().nth(pi).unwrap().data[ei] -= 2.0 * h;
        let down = loss(&s);
        let numeric = (up - down) / (2.0 * h);
        // a step that crosses an activation kink shows up as disagreeing one-sided slopes
        let (fwd, bwd) = ((up - base) / h, (base - down) / h);
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) {
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        worst = worst.max(rel);
        if rel >= 1e-2 {
            let name = &store.iter().nth(pi).unwrap().name;
            return Err(format!("{name}[{ei}]: analytic {analytic:e}, numeric {numeric:e}"));
        }
        checked += 1;
    }
    if checked < 10 {
        return Err(format!("only {checked} parameters had a usable gradient"));
    }
    Ok((checked, worst))
}


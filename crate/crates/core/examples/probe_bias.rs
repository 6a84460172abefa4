//! Dev probe: decompose the binary-SCM estimator bias by swapping true
//! (quadrature) nuisances for estimated ones, one family at a time.

use pathfx_core::scm::binary_scm;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn phi(t: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(t)
}

fn p_w1(x: f64, z: f64) -> f64 {
    1.0 - phi(0.8 - x + z)
}
fn p_v1(x: f64, z: f64, w: f64) -> f64 {
    1.0 - phi(0.8 - x + z - w)
}
fn p_y1(x: f64, z: f64, w: f64, v: f64) -> f64 {
    1.0 - phi(0.2 - x + z + 2.0 * (v - w))
}

fn quad_p_xz(x: f64, z: f64) -> f64 {
    let density = Normal::new(0.0, 1.0).unwrap();
    let (lo, hi) = if z == 1.0 { (0.2, 10.0) } else { (-10.0, 0.2) };
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let f = |u: f64| -> f64 { density.pdf(u) * (1.0 - phi(0.2 - z - u)) };
    let mut integral = f(lo) + f(hi);
    for k in 1..steps {
        let u = lo + h * k as f64;
        integral += f(u) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let p_x1_and_z = integral * h / 3.0;
    let p_z = if z == 1.0 { 1.0 - phi(0.2) } else { phi(0.2) };
    if x == 1.0 {
        p_x1_and_z
    } else {
        p_z - p_x1_and_z
    }
}

struct TrueNuisances {
    p_x1_z: [f64; 2],
    p_x1_wz: [[f64; 2]; 2],
    p_x1_vwz: [[[f64; 2]; 2]; 2],
}

impl TrueNuisances {
    fn build() -> Self {
        let mut out = TrueNuisances {
            p_x1_z: [0.0; 2],
            p_x1_wz: [[0.0; 2]; 2],
            p_x1_vwz: [[[0.0; 2]; 2]; 2],
        };
        for zi in 0..2 {
            let z = zi as f64;
            let joint: Vec<(f64, f64, f64, f64)> = (0..2)
                .flat_map(|xi| {
                    (0..2).flat_map(move |wi| {
                        (0..2).map(move |vi| {
                            let (x, w, v) = (xi as f64, wi as f64, vi as f64);
                            let pw = if w == 1.0 { p_w1(x, z) } else { 1.0 - p_w1(x, z) };
                            let pv = if v == 1.0 {
                                p_v1(x, z, w)
                            } else {
                                1.0 - p_v1(x, z, w)
                            };
                            (x, w, v, quad_p_xz(x, z) * pw * pv)
                        })
                    })
                })
                .collect();
            let mass = |f: &dyn Fn(f64, f64, f64) -> bool| -> f64 {
                joint.iter().filter(|(x, w, v, _)| f(*x, *w, *v)).map(|c| c.3).sum()
            };
            out.p_x1_z[zi] = mass(&|x, _, _| x == 1.0) / mass(&|_, _, _| true);
            for wi in 0..2 {
                let w = wi as f64;
                out.p_x1_wz[wi][zi] =
                    mass(&|x, wc, _| x == 1.0 && wc == w) / mass(&|_, wc, _| wc == w);
                for vi in 0..2 {
                    let v = vi as f64;
                    out.p_x1_vwz[vi][wi][zi] = mass(&|x, wc, vc| x == 1.0 && wc == w && vc == v)
                        / mass(&|_, wc, vc| wc == w && vc == v);
                }
            }
        }
        out
    }
}

// true nested regressions pinned at (x1, x0) = (1, 0)
fn mu3(v: f64, w: f64, z: f64) -> f64 {
    p_y1(1.0, z, w, v)
}
fn mu2(w: f64, z: f64, nu: &TrueNuisances) -> f64 {
    // E[mu3(V, w, 1, z) | w, X=0, z], V | x0, w, z observational = mechanism
    let pv = p_v1(0.0, z, w);
    let _ = nu;
    pv * mu3(1.0, w, z) + (1.0 - pv) * mu3(0.0, w, z)
}
fn mu1(z: f64, nu: &TrueNuisances) -> f64 {
    // E[mu2(W, z) | X=1, z]: W | x1, z observational = mechanism
    let pw = p_w1(1.0, z);
    pw * mu2(1.0, z, nu) + (1.0 - pw) * mu2(0.0, z, nu)
}

fn main() {
    let spec = binary_scm();
    let truth = -0.1232634215;
    let nu = TrueNuisances::build();
    let reps = 40u64;
    let n = 32_000usize;
    let mut errs = Vec::new();
    for r in 0..reps {
        let cohort = spec.sample(n, 5_000 + r).unwrap();
        let mut phi_diff_sum = 0.0;
        for i in 0..cohort.n() {
            let (y, v, w, x, z) = (
                cohort.y()[i],
                cohort.v()[[i, 0]],
                cohort.w()[[i, 0]],
                f64::from(cohort.x()[i]),
                cohort.z()[[i, 0]],
            );
            let (zi, wi, vi) = (z as usize, w as usize, v as usize);
            let p1z = nu.p_x1_z[zi];
            let p1wz = nu.p_x1_wz[wi][zi];
            let p1vwz = nu.p_x1_vwz[vi][wi][zi];
            let pi1 = if x == 1.0 { 1.0 / p1z } else { 0.0 };
            let pi2 = if x == 0.0 {
                p1wz / ((1.0 - p1wz) * p1z)
            } else {
                0.0
            };
            let pi3 = if x == 1.0 {
                (1.0 - p1vwz) * p1wz / (p1vwz * (1.0 - p1wz) * p1z)
            } else {
                0.0
            };
            let m3 = mu3(v, w, z);
            let m2 = mu2(w, z, &nu);
            let m1 = mu1(z, &nu);
            let phi_nested = pi3 * (y - m3) + pi2 * (m3 - m2) + pi1 * (m2 - m1) + m1;
            let phi_bd = pi1 * (y - p_y_marg(z)) + p_y_marg(z);
            phi_diff_sum += phi_bd - phi_nested;
        }
        errs.push((phi_diff_sum / cohort.n() as f64 - truth) / truth.abs());
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let sd = (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (errs.len() - 1) as f64)
        .sqrt();
    println!(
        "true-nuisance phi: mean rel err {:+.3}% (sd {:.2}%, se {:.3}%)",
        100.0 * mean,
        100.0 * sd,
        100.0 * sd / (reps as f64).sqrt()
    );
}

// E[Y | X=1, z] for the backdoor functional
fn p_y_marg(z: f64) -> f64 {
    let pw = p_w1(1.0, z);
    let mut total = 0.0;
    for w in [0.0, 1.0] {
        let pwv = if w == 1.0 { pw } else { 1.0 - pw };
        let pv = p_v1(1.0, z, w);
        for v in [0.0, 1.0] {
            let pvv = if v == 1.0 { pv } else { 1.0 - pv };
            total += pwv * pvv * p_y1(1.0, z, w, v);
        }
    }
    total
}

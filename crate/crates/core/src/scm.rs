//! Synthetic structural causal models over (Z, X, W, V, Y).
//!
//! All mechanism kinds share the graph Z -> {X, W, V, Y}, X -> {W, V, Y},
//! W -> {V, Y}, V -> Y, with a latent common cause of X and Z realized as a
//! shared noise term `u_xz` that enters both the Z and X equations. Given an
//! exogenous noise draw, every variable is a deterministic function of its
//! parents, so the same [`Noise`] value can be pushed through different
//! interventions to produce counterfactual worlds (see [`crate::oracle`]).
//!
//! Four kinds are provided:
//!
//! * `BinaryThreshold`: singleton binary variables with fixed coefficients,
//!   Z = 1[u_xz > 0.2], X = 1[Z + u_x + u_xz > 0.2], W = 1[X - Z + u_w > 0.8],
//!   V = 1[X - Z + W + u_v > 0.8], Y = 1[X - Z + 2(W - V) + u_y > 0.2],
//!   all noises standard normal.
//! * `DiscreteEnumerable`: the same threshold equations with finite-support
//!   noise, so the full joint is exactly enumerable.
//! * `LinearGaussian`: multi-dimensional linear mechanisms with Gaussian
//!   noise; X stays binary through a threshold on a linear index.
//! * `NonlinearSurrogate`: random shallow decision-tree ensembles as
//!   mechanisms, with a binary Y drawn through a sigmoid link.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Sample};
use crate::error::{Error, Result};
use crate::util::derive_seed;

const WEIGHT_STREAM: u64 = 0xA11C_E5ED;
const SAMPLE_STREAM: u64 = 0x5A3B_1E00;
const CALIBRATE_STREAM: u64 = 0xCA11_B007;

/// Noise distribution for one exogenous variable (or one vector component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    StandardNormal,
    /// Finite support with listed atoms and probabilities (sum to 1).
    Finite { atoms: Vec<f64>, probs: Vec<f64> },
}

impl NoiseSpec {
    pub fn is_finite(&self) -> bool {
        matches!(self, NoiseSpec::Finite { .. })
    }

    fn validate(&self) -> Result<()> {
        if let NoiseSpec::Finite { atoms, probs } = self {
            if atoms.is_empty() || atoms.len() != probs.len() {
                return Err(Error::invalid("finite noise needs matching atoms/probs"));
            }
            if probs.iter().any(|p| *p <= 0.0) {
                return Err(Error::invalid("finite noise probabilities must be positive"));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("finite noise probabilities must sum to 1"));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseSpec::StandardNormal => rng.sample(StandardNormal),
            NoiseSpec::Finite { atoms, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *a;
                    }
                }
                *atoms.last().unwrap()
            }
        }
    }
}

/// Per-variable noise specification. `u_z` is only consulted by the
/// vector-valued kinds; the threshold kinds draw Z from `u_xz` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSet {
    pub u_xz: NoiseSpec,
    pub u_x: NoiseSpec,
    pub u_z: NoiseSpec,
    pub u_w: NoiseSpec,
    pub u_v: NoiseSpec,
    pub u_y: NoiseSpec,
}

impl NoiseSet {
    fn all_normal() -> Self {
        NoiseSet {
            u_xz: NoiseSpec::StandardNormal,
            u_x: NoiseSpec::StandardNormal,
            u_z: NoiseSpec::StandardNormal,
            u_w: NoiseSpec::StandardNormal,
            u_v: NoiseSpec::StandardNormal,
            u_y: NoiseSpec::StandardNormal,
        }
    }
}

/// One exogenous draw. Vector entries are empty for scalar mechanism kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub u_xz: f64,
    pub u_x: f64,
    pub u_z: Vec<f64>,
    pub u_w: Vec<f64>,
    pub u_v: Vec<f64>,
    pub u_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    BinaryThreshold,
    LinearGaussian,
    NonlinearSurrogate,
    DiscreteEnumerable,
}

/// Coefficients for the scalar threshold kinds. Each variable fires when a
/// linear index of its parents plus noise exceeds its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdWeights {
    pub a_xz: f64,
    pub a_wx: f64,
    pub a_wz: f64,
    pub a_vx: f64,
    pub a_vz: f64,
    pub a_vw: f64,
    pub a_yx: f64,
    pub a_yz: f64,
    pub a_yw: f64,
    pub a_yv: f64,
    pub th_z: f64,
    pub th_x: f64,
    pub th_w: f64,
    pub th_v: f64,
    pub th_y: f64,
}

/// Weights for the linear-Gaussian kind. Matrices are stored row-major as
/// nested vectors so the spec serializes to plain JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    /// Loading of the shared confounding noise onto each Z component.
    pub lambda_z: Vec<f64>,
    pub w_xz: Vec<f64>,
    pub th_x: f64,
    pub a_wz: Vec<Vec<f64>>,
    pub a_wx: Vec<f64>,
    pub a_vz: Vec<Vec<f64>>,
    pub a_vx: Vec<f64>,
    pub a_vw: Vec<Vec<f64>>,
    pub w_yz: Vec<f64>,
    pub a_yx: f64,
    pub w_yw: Vec<f64>,
    pub w_yv: Vec<f64>,
}

/// A complete binary tree of fixed depth with random splits and leaf values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTree {
    pub depth: usize,
    /// Feature index per internal node (heap order, 2^depth - 1 entries).
    pub features: Vec<usize>,
    /// Split threshold per internal node.
    pub cuts: Vec<f64>,
    /// Leaf values (2^depth entries).
    pub leaves: Vec<f64>,
}

impl RandomTree {
    fn generate(rng: &mut ChaCha8Rng, n_features: usize, depth: usize) -> Self {
        let internal = (1 << depth) - 1;
        let features = (0..internal).map(|_| rng.gen_range(0..n_features)).collect();
        let cuts = (0..internal).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let leaves = (0..(1 << depth)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        RandomTree {
            depth,
            features,
            cuts,
            leaves,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        for _ in 0..self.depth {
            let go_right = x[self.features[node]] > self.cuts[node];
            node = 2 * node + if go_right { 2 } else { 1 };
        }
        self.leaves[node - ((1 << self.depth) - 1)]
    }
}

/// A sum of random trees scaled so the output magnitude is roughly constant
/// in the tree count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEnsemble {
    pub trees: Vec<RandomTree>,
    pub scale: f64,
}

impl RandomEnsemble {
    fn generate(
        rng: &mut ChaCha8Rng,
        n_features: usize,
        depth: usize,
        n_trees: usize,
        gain: f64,
    ) -> Self {
        let trees = (0..n_trees)
            .map(|_| RandomTree::generate(rng, n_features, depth))
            .collect();
        let scale = if n_trees == 0 {
            0.0
        } else {
            gain / (n_trees as f64).sqrt()
        };
        RandomEnsemble { trees, scale }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.scale * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

/// Mechanisms for the nonlinear surrogate kind. Feature layout per ensemble:
/// `g_x` sees z; `g_w[j]` sees (z, x); `g_v[j]` sees (z, x, w); `g_y` sees
/// (z, x, w, v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateWeights {
    pub lambda_z: Vec<f64>,
    pub g_x: RandomEnsemble,
    pub th_x: f64,
    pub g_w: Vec<RandomEnsemble>,
    pub g_v: Vec<RandomEnsemble>,
    pub g_y: RandomEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Weights {
    Threshold(ThresholdWeights),
    Linear(LinearWeights),
    Surrogate(SurrogateWeights),
}

/// Generative specification of a structural causal model. Immutable after
/// construction; sampling is stateless given an explicit seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub kind: MechanismKind,
    pub dim_z: usize,
    pub dim_w: usize,
    pub dim_v: usize,
    pub weights: Weights,
    pub noise: NoiseSet,
    pub seed: u64,
}

/// The fixed singleton-binary model with standard normal noise.
pub fn binary_scm() -> ScmSpec {
    ScmSpec {
        kind: MechanismKind::BinaryThreshold,
        dim_z: 1,
        dim_w: 1,
        dim_v: 1,
        weights: Weights::Threshold(ThresholdWeights {
            a_xz: 1.0,
            a_wx: 1.0,
            a_wz: -1.0,
            a_vx: 1.0,
            a_vz: -1.0,
            a_vw: 1.0,
            a_yx: 1.0,
            a_yz: -1.0,
            a_yw: 2.0,
            a_yv: -2.0,
            th_z: 0.2,
            th_x: 0.2,
            th_w: 0.8,
            th_v: 0.8,
            th_y: 0.2,
        }),
        noise: NoiseSet::all_normal(),
        seed: 0,
    }
}

/// A fixed discrete-enumerable reference model used throughout the test
/// suite: the threshold equations of [`binary_scm`] with three-atom noise on
/// every mechanism variable, chosen so that all 32 cells of the joint over
/// (z, x, w, v, y) have positive probability while every variable still
/// depends on its parents. (With two atoms per noise a threshold mechanism is
/// either degenerate or violates positivity, so three atoms is the smallest
/// enumerable design that exercises the estimators.)
pub fn discrete_reference_scm() -> ScmSpec {
    let mut spec = binary_scm();
    spec.kind = MechanismKind::DiscreteEnumerable;
    spec.noise = NoiseSet {
        u_xz: NoiseSpec::Finite {
            atoms: vec![-1.0, 1.0],
            probs: vec![0.55, 0.45],
        },
        u_x: NoiseSpec::Finite {
            atoms: vec![-3.0, 0.0, 2.0],
            probs: vec![0.35, 0.25, 0.40],
        },
        u_z: NoiseSpec::StandardNormal,
        u_w: NoiseSpec::Finite {
            atoms: vec![-2.5, 0.3, 2.2],
            probs: vec![0.4, 0.3, 0.3],
        },
        u_v: NoiseSpec::Finite {
            atoms: vec![-3.0, 0.5, 2.5],
            probs: vec![0.45, 0.3, 0.25],
        },
        u_y: NoiseSpec::Finite {
            atoms: vec![-4.0, 1.0, 3.5],
            probs: vec![0.35, 0.4, 0.25],
        },
    };
    spec
}

/// Linear-Gaussian model with weights drawn once from the seed, i.i.d.
/// uniform on [-1, 1] scaled by 1/sqrt(fan-in). X is a threshold of a linear
/// index so it stays binary.
pub fn linear_scm(dim_z: usize, dim_w: usize, dim_v: usize, seed: u64) -> Result<ScmSpec> {
    if dim_z == 0 || dim_w == 0 || dim_v == 0 {
        return Err(Error::invalid("linear_scm dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, WEIGHT_STREAM));
    let mut vector = |len: usize, fan_in: usize| -> Vec<f64> {
        let s = 1.0 / (fan_in as f64).sqrt();
        (0..len).map(|_| rng.gen_range(-1.0..1.0) * s).collect()
    };
    let lambda_z = vector(dim_z, 1);
    let w_xz = vector(dim_z, dim_z);
    let fan_w = dim_z + 1;
    let a_wz: Vec<Vec<f64>> = (0..dim_w).map(|_| vector(dim_z, fan_w)).collect();
    let a_wx = vector(dim_w, fan_w);
    let fan_v = dim_z + 1 + dim_w;
    let a_vz: Vec<Vec<f64>> = (0..dim_v).map(|_| vector(dim_z, fan_v)).collect();
    let a_vx = vector(dim_v, fan_v);
    let a_vw: Vec<Vec<f64>> = (0..dim_v).map(|_| vector(dim_w, fan_v)).collect();
    let fan_y = dim_z + 1 + dim_w + dim_v;
    let w_yz = vector(dim_z, fan_y);
    let a_yx = vector(1, fan_y)[0];
    let w_yw = vector(dim_w, fan_y);
    let w_yv = vector(dim_v, fan_y);
    Ok(ScmSpec {
        kind: MechanismKind::LinearGaussian,
        dim_z,
        dim_w,
        dim_v,
        weights: Weights::Linear(LinearWeights {
            lambda_z,
            w_xz,
            th_x: 0.0,
            a_wz,
            a_wx,
            a_vz,
            a_vx,
            a_vw,
            w_yz,
            a_yx,
            w_yw,
            w_yv,
        }),
        noise: NoiseSet::all_normal(),
        seed,
    })
}

/// Nonlinear surrogate model: every mechanism is a randomly generated shallow
/// decision-tree ensemble, and Y is binary with P(Y=1 | parents) given by a
/// sigmoid of the ensemble output. Zero trees are allowed and make the
/// affected mechanism constant.
pub fn nonlinear_scm(
    dim_z: usize,
    dim_w: usize,
    dim_v: usize,
    depth: usize,
    n_trees: usize,
    seed: u64,
) -> Result<ScmSpec> {
    if dim_z == 0 || dim_w == 0 || dim_v == 0 {
        return Err(Error::invalid("nonlinear_scm dimensions must be positive"));
    }
    if depth == 0 {
        return Err(Error::invalid("nonlinear_scm depth must be positive"));
    }
    let gain = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, WEIGHT_STREAM));
    let lambda_z: Vec<f64> = (0..dim_z).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g_x = RandomEnsemble::generate(&mut rng, dim_z, depth, n_trees, gain);
    let g_w = (0..dim_w)
        .map(|_| RandomEnsemble::generate(&mut rng, dim_z + 1, depth, n_trees, gain))
        .collect();
    let g_v = (0..dim_v)
        .map(|_| RandomEnsemble::generate(&mut rng, dim_z + 1 + dim_w, depth, n_trees, gain))
        .collect();
    let g_y = RandomEnsemble::generate(&mut rng, dim_z + 1 + dim_w + dim_v, depth, n_trees, gain);
    Ok(ScmSpec {
        kind: MechanismKind::NonlinearSurrogate,
        dim_z,
        dim_w,
        dim_v,
        weights: Weights::Surrogate(SurrogateWeights {
            lambda_z,
            g_x,
            th_x: 0.0,
            g_w,
            g_v,
            g_y,
        }),
        noise: NoiseSet::all_normal(),
        seed,
    })
}

impl ScmSpec {
    pub fn validate(&self) -> Result<()> {
        self.noise.u_xz.validate()?;
        self.noise.u_x.validate()?;
        self.noise.u_z.validate()?;
        self.noise.u_w.validate()?;
        self.noise.u_v.validate()?;
        self.noise.u_y.validate()?;
        match (&self.kind, &self.weights) {
            (MechanismKind::BinaryThreshold, Weights::Threshold(_))
            | (MechanismKind::DiscreteEnumerable, Weights::Threshold(_)) => {
                if self.dim_z != 1 || self.dim_w != 1 || self.dim_v != 1 {
                    return Err(Error::invalid("threshold kinds are singleton-valued"));
                }
            }
            (MechanismKind::LinearGaussian, Weights::Linear(_)) => {}
            (MechanismKind::NonlinearSurrogate, Weights::Surrogate(_)) => {}
            _ => return Err(Error::invalid("mechanism kind does not match weights")),
        }
        if self.kind == MechanismKind::DiscreteEnumerable && !self.is_enumerable() {
            return Err(Error::NotEnumerable(
                "discrete-enumerable kind requires finite-support noise".into(),
            ));
        }
        Ok(())
    }

    /// True when every noise variable the mechanisms consult has finite
    /// support, so the joint can be summed exactly.
    pub fn is_enumerable(&self) -> bool {
        matches!(self.weights, Weights::Threshold(_))
            && self.noise.u_xz.is_finite()
            && self.noise.u_x.is_finite()
            && self.noise.u_w.is_finite()
            && self.noise.u_v.is_finite()
            && self.noise.u_y.is_finite()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScmSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn draw_noise(&self, rng: &mut ChaCha8Rng) -> Noise {
        let scalar_mech = matches!(self.weights, Weights::Threshold(_));
        Noise {
            u_xz: self.noise.u_xz.draw(rng),
            u_x: self.noise.u_x.draw(rng),
            u_z: if scalar_mech {
                Vec::new()
            } else {
                (0..self.dim_z).map(|_| self.noise.u_z.draw(rng)).collect()
            },
            u_w: (0..if scalar_mech { 1 } else { self.dim_w })
                .map(|_| self.noise.u_w.draw(rng))
                .collect(),
            u_v: (0..if scalar_mech { 1 } else { self.dim_v })
                .map(|_| self.noise.u_v.draw(rng))
                .collect(),
            u_y: self.noise.u_y.draw(rng),
        }
    }

    pub fn mech_z(&self, u: &Noise) -> Vec<f64> {
        match &self.weights {
            Weights::Threshold(t) => vec![if u.u_xz > t.th_z { 1.0 } else { 0.0 }],
            Weights::Linear(l) => (0..self.dim_z)
                .map(|j| u.u_z[j] + l.lambda_z[j] * u.u_xz)
                .collect(),
            Weights::Surrogate(s) => (0..self.dim_z)
                .map(|j| u.u_z[j] + s.lambda_z[j] * u.u_xz)
                .collect(),
        }
    }

    /// Linear index of the exposure mechanism; X = 1[index > th_x].
    pub fn x_index(&self, u: &Noise, z: &[f64]) -> f64 {
        match &self.weights {
            Weights::Threshold(t) => t.a_xz * z[0] + u.u_x + u.u_xz,
            Weights::Linear(l) => dot(&l.w_xz, z) + u.u_x + u.u_xz,
            Weights::Surrogate(s) => s.g_x.eval(z) + u.u_x + u.u_xz,
        }
    }

    pub fn x_threshold(&self) -> f64 {
        match &self.weights {
            Weights::Threshold(t) => t.th_x,
            Weights::Linear(l) => l.th_x,
            Weights::Surrogate(s) => s.th_x,
        }
    }

    fn set_x_threshold(&mut self, th: f64) {
        match &mut self.weights {
            Weights::Threshold(t) => t.th_x = th,
            Weights::Linear(l) => l.th_x = th,
            Weights::Surrogate(s) => s.th_x = th,
        }
    }

    pub fn mech_x(&self, u: &Noise, z: &[f64]) -> u8 {
        u8::from(self.x_index(u, z) > self.x_threshold())
    }

    pub fn mech_w(&self, u: &Noise, x: u8, z: &[f64]) -> Vec<f64> {
        let xf = f64::from(x);
        match &self.weights {
            Weights::Threshold(t) => {
                let idx = t.a_wx * xf + t.a_wz * z[0] + u.u_w[0];
                vec![if idx > t.th_w { 1.0 } else { 0.0 }]
            }
            Weights::Linear(l) => (0..self.dim_w)
                .map(|j| dot(&l.a_wz[j], z) + l.a_wx[j] * xf + u.u_w[j])
                .collect(),
            Weights::Surrogate(s) => {
                let mut feats = Vec::with_capacity(self.dim_z + 1);
                feats.extend_from_slice(z);
                feats.push(xf);
                (0..self.dim_w).map(|j| s.g_w[j].eval(&feats) + u.u_w[j]).collect()
            }
        }
    }

    pub fn mech_v(&self, u: &Noise, x: u8, z: &[f64], w: &[f64]) -> Vec<f64> {
        let xf = f64::from(x);
        match &self.weights {
            Weights::Threshold(t) => {
                let idx = t.a_vx * xf + t.a_vz * z[0] + t.a_vw * w[0] + u.u_v[0];
                vec![if idx > t.th_v { 1.0 } else { 0.0 }]
            }
            Weights::Linear(l) => (0..self.dim_v)
                .map(|j| dot(&l.a_vz[j], z) + l.a_vx[j] * xf + dot(&l.a_vw[j], w) + u.u_v[j])
                .collect(),
            Weights::Surrogate(s) => {
                let mut feats = Vec::with_capacity(self.dim_z + 1 + self.dim_w);
                feats.extend_from_slice(z);
                feats.push(xf);
                feats.extend_from_slice(w);
                (0..self.dim_v).map(|j| s.g_v[j].eval(&feats) + u.u_v[j]).collect()
            }
        }
    }

    pub fn mech_y(&self, u: &Noise, x: u8, z: &[f64], w: &[f64], v: &[f64]) -> f64 {
        let xf = f64::from(x);
        match &self.weights {
            Weights::Threshold(t) => {
                let idx = t.a_yx * xf + t.a_yz * z[0] + t.a_yw * w[0] + t.a_yv * v[0] + u.u_y;
                if idx > t.th_y {
                    1.0
                } else {
                    0.0
                }
            }
            Weights::Linear(l) => {
                dot(&l.w_yz, z) + l.a_yx * xf + dot(&l.w_yw, w) + dot(&l.w_yv, v) + u.u_y
            }
            Weights::Surrogate(s) => {
                let mut feats = Vec::with_capacity(self.dim_z + 1 + self.dim_w + self.dim_v);
                feats.extend_from_slice(z);
                feats.push(xf);
                feats.extend_from_slice(w);
                feats.extend_from_slice(v);
                let p = sigmoid(s.g_y.eval(&feats));
                // Probability integral transform: u_y ~ N(0,1) gives a
                // uniform Phi(u_y), so P(Y=1 | parents) = sigmoid(g_y).
                if normal_cdf(u.u_y) < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// The observational world induced by one noise draw.
    pub fn observe(&self, u: &Noise) -> Sample {
        let z = self.mech_z(u);
        let x = self.mech_x(u, &z);
        let w = self.mech_w(u, x, &z);
        let v = self.mech_v(u, x, &z, &w);
        let y = self.mech_y(u, x, &z, &w, &v);
        Sample { z, x, w, v, y }
    }

    /// Draws `n` i.i.d. observational rows, deterministic in
    /// (`self.seed`, `seed`).
    pub fn sample(&self, n: usize, seed: u64) -> Result<Cohort> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        self.validate()?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.seed, SAMPLE_STREAM), seed));
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let u = self.draw_noise(&mut rng);
                self.observe(&u)
            })
            .collect();
        Cohort::from_samples(&samples)
    }

    /// Enumerates the full finite noise support with probabilities. Errors on
    /// kinds whose noise is not finite.
    pub fn noise_support(&self) -> Result<Vec<(Noise, f64)>> {
        if !self.is_enumerable() {
            return Err(Error::NotEnumerable(format!(
                "kind {:?} with non-finite noise cannot be enumerated",
                self.kind
            )));
        }
        let atoms = |spec: &NoiseSpec| -> Vec<(f64, f64)> {
            match spec {
                NoiseSpec::Finite { atoms, probs } => {
                    atoms.iter().copied().zip(probs.iter().copied()).collect()
                }
                NoiseSpec::StandardNormal => unreachable!(),
            }
        };
        let (axz, ax, aw, av, ay) = (
            atoms(&self.noise.u_xz),
            atoms(&self.noise.u_x),
            atoms(&self.noise.u_w),
            atoms(&self.noise.u_v),
            atoms(&self.noise.u_y),
        );
        let mut out =
            Vec::with_capacity(axz.len() * ax.len() * aw.len() * av.len() * ay.len());
        for &(uxz, pxz) in &axz {
            for &(ux, px) in &ax {
                for &(uw, pw) in &aw {
                    for &(uv, pv) in &av {
                        for &(uy, py) in &ay {
                            out.push((
                                Noise {
                                    u_xz: uxz,
                                    u_x: ux,
                                    u_z: Vec::new(),
                                    u_w: vec![uw],
                                    u_v: vec![uv],
                                    u_y: uy,
                                },
                                pxz * px * pw * pv * py,
                            ));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns a copy with the X threshold shifted so that P(X=1) is within
    /// 0.005 of `eta`, solved by bisection on a 10^6-draw estimate of the
    /// exposure index distribution.
    pub fn calibrate_imbalance(&self, eta: f64) -> Result<ScmSpec> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::invalid("eta must lie strictly between 0 and 1"));
        }
        self.validate()?;
        const DRAWS: usize = 1_000_000;
        const TOL: f64 = 0.005;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, CALIBRATE_STREAM));
        let mut indices: Vec<f64> = (0..DRAWS)
            .map(|_| {
                let u = self.draw_noise(&mut rng);
                let z = self.mech_z(&u);
                self.x_index(&u, &z)
            })
            .collect();
        indices.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let frac_above = |t: f64| -> f64 {
            let below = indices.partition_point(|&v| v <= t);
            (DRAWS - below) as f64 / DRAWS as f64
        };
        let mut lo = indices[0] - 1.0;
        let mut hi = indices[DRAWS - 1] + 1.0;
        // frac_above is monotone decreasing in the threshold
        let mut best = self.x_threshold();
        let mut best_err = (frac_above(best) - eta).abs();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p = frac_above(mid);
            let err = (p - eta).abs();
            if err < best_err {
                best_err = err;
                best = mid;
            }
            if err <= TOL * 0.2 || hi - lo < 1e-12 {
                break;
            }
            if p > eta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best_err > TOL {
            return Err(Error::Calibration(format!(
                "eta = {eta} unreachable within threshold range (best error {best_err:.4})"
            )));
        }
        let mut out = self.clone();
        out.set_x_threshold(best);
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t.clamp(-30.0, 30.0)).exp())
}

fn normal_cdf(t: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().cdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_scm_z_rate_matches_gaussian_tail() {
        // P(Z=1) = 1 - Phi(0.2) ~ 0.4207
        let spec = binary_scm();
        let cohort = spec.sample(1_000_000, 11).unwrap();
        let rate = cohort.z().column(0).mean().unwrap();
        assert!((rate - 0.4207403).abs() < 0.002, "rate = {rate}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = linear_scm(3, 10, 3, 42).unwrap();
        let a = spec.sample(500, 9).unwrap();
        let b = spec.sample(500, 9).unwrap();
        assert_eq!(a, b);
        let c = spec.sample(500, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn linear_weights_are_seed_stable() {
        let a = linear_scm(3, 10, 3, 7).unwrap();
        let b = linear_scm(3, 10, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = linear_scm(3, 10, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_zero_sample_and_bad_dims() {
        assert!(binary_scm().sample(0, 1).is_err());
        assert!(linear_scm(0, 1, 1, 1).is_err());
        assert!(nonlinear_scm(1, 1, 1, 0, 5, 1).is_err());
    }

    #[test]
    fn spec_json_round_trips() {
        for spec in [
            binary_scm(),
            discrete_reference_scm(),
            linear_scm(2, 3, 2, 5).unwrap(),
            nonlinear_scm(2, 3, 2, 2, 4, 5).unwrap(),
        ] {
            let text = spec.to_json().unwrap();
            let back = ScmSpec::from_json(&text).unwrap();
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn reference_spec_enumerates_to_unit_mass() {
        let spec = discrete_reference_scm();
        let support = spec.noise_support().unwrap();
        assert_eq!(support.len(), 2 * 3 * 3 * 3 * 3);
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_scm_is_not_enumerable() {
        assert!(binary_scm().noise_support().is_err());
    }

    #[test]
    fn calibrate_hits_target_fraction() {
        let spec = linear_scm(3, 10, 3, 21).unwrap();
        for eta in [0.1, 0.2, 0.33, 0.5] {
            let cal = spec.calibrate_imbalance(eta).unwrap();
            let cohort = cal.sample(32_000, 3).unwrap();
            let frac = cohort.count_x(1) as f64 / cohort.n() as f64;
            assert!((frac - eta).abs() < 0.01, "eta {eta}: got {frac}");
        }
    }

    #[test]
    fn calibrate_rejects_unreachable_eta_on_discrete_index() {
        // The discrete reference spec has an atomic index distribution, so
        // most fractions are unreachable within 0.005.
        let spec = discrete_reference_scm();
        assert!(spec.calibrate_imbalance(0.21).is_err());
    }

    #[test]
    fn zero_tree_surrogate_outputs_constants() {
        let spec = nonlinear_scm(2, 2, 2, 2, 0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = spec.draw_noise(&mut rng);
        let z = spec.mech_z(&u);
        // With zero trees the ensembles output 0, so Y is a fair coin flip
        // independent of everything.
        let w = spec.mech_w(&u, 1, &z);
        let w0 = spec.mech_w(&u, 0, &z);
        assert_eq!(w, w0);
    }
}

//! One qubit, X rotations, and a Gaussian actor that learns the rotation
//! angle preparing a target state.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    amp0: Complex64,
    amp1: Complex64,
}

impl QubitState {
    pub fn new(amp0: Complex64, amp1: Complex64) -> Result<Self> {
        let norm = amp0.norm_sqr() + amp1.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amp0, amp1 })
    }

    /// Scales the amplitudes to unit norm.
    pub fn normalized(amp0: Complex64, amp1: Complex64) -> Result<Self> {
        let n = (amp0.norm_sqr() + amp1.norm_sqr()).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("cannot normalize a zero vector".into()));
        }
        Self::new(amp0 / n, amp1 / n)
    }

    pub fn zero() -> Self {
        Self {
            amp0: Complex64::new(1.0, 0.0),
            amp1: Complex64::new(0.0, 0.0),
        }
    }

    pub fn one() -> Self {
        Self {
            amp0: Complex64::new(0.0, 0.0),
            amp1: Complex64::new(1.0, 0.0),
        }
    }

    /// (|0⟩ + |1⟩)/√2
    pub fn plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            amp0: Complex64::new(h, 0.0),
            amp1: Complex64::new(h, 0.0),
        }
    }

    pub fn amp0(&self) -> Complex64 {
        self.amp0
    }

    pub fn amp1(&self) -> Complex64 {
        self.amp1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp0.norm_sqr() + self.amp1.norm_sqr()
    }

    /// e^{iφ}|ψ⟩
    pub fn with_phase(&self, phi: f64) -> Self {
        let p = Complex64::from_polar(1.0, phi);
        Self {
            amp0: p * self.amp0,
            amp1: p * self.amp1,
        }
    }
}

/// A 2×2 unitary, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2 {
    m: [[Complex64; 2]; 2],
}

impl Unitary2 {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let u = Self { m };
        if u.unitarity_error() > NORM_TOL {
            return Err(Error::InvalidParameter("matrix is not unitary".into()));
        }
        Ok(u)
    }

    pub fn identity() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Self { m: [[o, z], [z, o]] }
    }

    pub fn entries(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn dagger(&self) -> Self {
        let m = self.m;
        Self {
            m: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
        }
    }

    /// self · other
    pub fn compose(&self, other: &Unitary2) -> Self {
        let (a, b) = (self.m, other.m);
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self { m }
    }

    /// Largest entrywise deviation of U†U from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger().compose(self).m;
        let id = Self::identity().m;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((p[i][j] - id[i][j]).norm());
            }
        }
        worst
    }
}

/// e^{−iθσ_x/2}
pub fn rx(theta: f64) -> Unitary2 {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = Complex64::new(0.0, -(theta / 2.0).sin());
    Unitary2 { m: [[c, s], [s, c]] }
}

pub fn apply(u: &Unitary2, psi: &QubitState) -> QubitState {
    let m = u.m;
    let out = QubitState {
        amp0: m[0][0] * psi.amp0 + m[0][1] * psi.amp1,
        amp1: m[1][0] * psi.amp0 + m[1][1] * psi.amp1,
    };
    let drift = (out.norm_sqr() - 1.0).abs();
    assert!(drift <= 1e-9, "norm drifted by {drift} applying a unitary");
    out
}

/// |⟨target|ψ⟩|², capped at 1 against rounding.
pub fn fidelity(psi: &QubitState, target: &QubitState) -> f64 {
    let overlap = target.amp0.conj() * psi.amp0 + target.amp1.conj() * psi.amp1;
    overlap.norm_sqr().min(1.0)
}

pub fn bloch(psi: &QubitState) -> [f64; 3] {
    let c = psi.amp0.conj() * psi.amp1;
    [2.0 * c.re, 2.0 * c.im, psi.amp0.norm_sqr() - psi.amp1.norm_sqr()]
}

/// Gaussian policy over the rotation angle plus a scalar baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianActor {
    pub mu: f64,
    pub log_sigma: f64,
    pub baseline: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GaussianActor {
    fn default() -> Self {
        Self {
            mu: PI / 2.0,
            log_sigma: 0.0,
            baseline: 0.0,
            alpha: 0.05,
            beta: 0.1,
        }
    }
}

impl GaussianActor {
    pub fn new(mu: f64, sigma: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidParameter("mu must be finite".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite() && beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter("step sizes must be non-negative".into()));
        }
        Ok(Self {
            mu: mu.rem_euclid(TAU),
            log_sigma: sigma.ln(),
            baseline: 0.0,
            alpha,
            beta,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn log_prob(&self, theta: f64) -> f64 {
        let s = self.sigma();
        let z = (theta - self.mu) / s;
        -0.5 * z * z - self.log_sigma - 0.5 * TAU.ln()
    }

    /// ∂ log π(θ) / ∂μ
    pub fn grad_mu(&self, theta: f64) -> f64 {
        (theta - self.mu) / self.sigma().powi(2)
    }

    /// ∂ log π(θ) / ∂ log σ
    pub fn grad_log_sigma(&self, theta: f64) -> f64 {
        let z = (theta - self.mu) / self.sigma();
        z * z - 1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mu + self.sigma() * z
    }

    /// Fidelity reached by rotating `initial` through the mean angle.
    pub fn final_fidelity(&self, initial: &QubitState, target: &QubitState) -> f64 {
        fidelity(&apply(&rx(self.mu), initial), target)
    }

    /// One single-rotation episode: sample θ, score it, then update the
    /// baseline and both policy parameters. Returns (θ, reward).
    pub fn step<R: Rng + ?Sized>(&mut self, initial: &QubitState, target: &QubitState, rng: &mut R) -> (f64, f64) {
        let theta = self.sample(rng);
        let reward = fidelity(&apply(&rx(theta), initial), target);
        let advantage = reward - self.baseline;
        self.baseline += self.beta * (reward - self.baseline);
        let g_mu = self.grad_mu(theta);
        let g_ls = self.grad_log_sigma(theta);
        self.mu = (self.mu + self.alpha * advantage * g_mu).rem_euclid(TAU);
        self.log_sigma += self.alpha * advantage * g_ls;
        (theta, reward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitTraining {
    pub actor: GaussianActor,
    /// Reward of each episode's sampled rotation.
    pub fidelity_history: Vec<f64>,
    pub final_fidelity: f64,
}

pub fn train_qubit_controller<R: Rng + ?Sized>(
    initial: &QubitState,
    target: &QubitState,
    actor0: &GaussianActor,
    episodes: usize,
    rng: &mut R,
) -> Result<QubitTraining> {
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be at least 1".into()));
    }
    let mut actor = *actor0;
    let mut fidelity_history = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (_, r) = actor.step(initial, target, rng);
        fidelity_history.push(r);
    }
    Ok(QubitTraining {
        final_fidelity: actor.final_fidelity(initial, target),
        actor,
        fidelity_history,
    })
}

/// Angular distance between two angles, in [0, π].
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

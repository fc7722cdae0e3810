//! Parametric game families: nearly identical players with symmetric
//! couplings, and consensus games.

use serde::{Deserialize, Serialize};

use super::{CostSpec, GameSpec, PlayerSpec};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    /// `Q^i_{ii} = Q`, `Q^i_{ij} = B`, `Q^i_{jj} = C_i`, `Q^i_{jk} = D_i`.
    Symmetric,
    /// Each player penalizes its mean squared distance to the others.
    Consensus,
}

impl std::str::FromStr for ExampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "consensus" => Ok(Self::Consensus),
            other => Err(Error::InvalidParameter(format!("unknown example family '{other}'"))),
        }
    }
}

/// Scalar parameters of the example families; every matrix is the scalar
/// times `I_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    /// `A = drift · I`.
    pub drift: f64,
    /// `σ = noise · I`, nonzero.
    pub noise: f64,
    /// `R = control · I`, positive.
    pub control: f64,
    /// `Q^i_{ii} = coupling · I`, positive.
    pub coupling: f64,
    /// Symmetric family: `Q^i_{ij} = secondary · I` (nonnegative).
    pub secondary: f64,
    /// Symmetric family: `Q^i_{jj} = others · I`.
    pub others: f64,
    /// Symmetric family: `Q^i_{jk} = cross · I` for distinct `j, k ≠ i`.
    pub cross: f64,
    /// Relative spread of `C_i`, `D_i` across players: player `i` uses the
    /// factor `1 + spread · (i/(N−1) − ½)`.
    pub spread: f64,
    /// Symmetric family: every reference position `x̄_i^j` is `target · 1`.
    pub target: f64,
    pub initial_mean: f64,
    /// Initial precision `Σ_0 = initial_precision · I`.
    pub initial_precision: f64,
    /// Divide `secondary`, `others` by `N` and `cross` by `N²` so the family
    /// stays uniformly bounded as `N` grows.
    pub uniform: bool,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self {
            drift: -1.0,
            noise: 1.0,
            control: 1.0,
            coupling: 0.5,
            secondary: 0.0,
            others: 0.0,
            cross: 0.0,
            spread: 0.0,
            target: 0.0,
            initial_mean: 0.0,
            initial_precision: 2.0,
            uniform: false,
        }
    }
}

impl ExampleParams {
    /// Override fields from `key=value` pairs. Keys follow the usual
    /// notation: `A a1 a2 Q B C D spread xbar mu0 Sigma0 uniform`.
    pub fn apply_pairs<'a>(mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got '{pair}'")))?;
            let key = key.trim();
            let value = value.trim();
            if key == "uniform" {
                self.uniform = value
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("uniform={value}: expected bool")))?;
                continue;
            }
            let x: f64 = value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}={value}: not a number")))?;
            let slot = match key {
                "A" => &mut self.drift,
                "a1" => &mut self.noise,
                "a2" => &mut self.control,
                "Q" => &mut self.coupling,
                "B" => &mut self.secondary,
                "C" => &mut self.others,
                "D" => &mut self.cross,
                "spread" => &mut self.spread,
                "xbar" => &mut self.target,
                "mu0" => &mut self.initial_mean,
                "Sigma0" => &mut self.initial_precision,
                other => return Err(Error::InvalidParameter(format!("unknown parameter '{other}'"))),
            };
            *slot = x;
        }
        Ok(self)
    }
}

/// Build a game of the given family.
pub fn build_example(kind: ExampleKind, n: usize, d: usize, params: &ExampleParams) -> Result<GameSpec> {
    let p = params;
    if n < 2 || d < 1 {
        return Err(Error::InvalidParameter(format!("need N ≥ 2 and d ≥ 1, got N={n}, d={d}")));
    }
    if !(p.coupling > 0.0) {
        return Err(Error::InvalidParameter(format!("Q = {} is not positive", p.coupling)));
    }
    if !(p.control > 0.0) {
        return Err(Error::InvalidParameter(format!("a2 = {} is not positive", p.control)));
    }
    if p.noise == 0.0 || !p.noise.is_finite() {
        return Err(Error::InvalidParameter("a1 must be nonzero".into()));
    }
    if !(p.initial_precision > 0.0) {
        return Err(Error::InvalidParameter("Sigma0 must be positive".into()));
    }
    if kind == ExampleKind::Symmetric && p.secondary < 0.0 {
        return Err(Error::InvalidParameter(format!("B = {} is negative", p.secondary)));
    }
    let eye = Mat::identity(d, d);
    let player = PlayerSpec::new(
        &eye * p.drift,
        &eye * p.noise,
        &eye * p.control,
        Vector::from_element(d, p.initial_mean),
        &eye * p.initial_precision,
    );
    let players = vec![player; n];

    let nf = n as f64;
    let (secondary, others, cross) = if p.uniform {
        (p.secondary / nf, p.others / nf, p.cross / (nf * nf))
    } else {
        (p.secondary, p.others, p.cross)
    };
    let mut blocks = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let factor = 1.0 + p.spread * (i as f64 / (nf - 1.0) - 0.5);
        let block = |j: usize, k: usize| -> f64 {
            match kind {
                ExampleKind::Consensus => {
                    let w = p.coupling / (nf - 1.0);
                    match (j == i, k == i) {
                        (true, true) => p.coupling,
                        (true, false) | (false, true) => -w,
                        (false, false) if j == k => w,
                        _ => 0.0,
                    }
                }
                ExampleKind::Symmetric => match (j == i, k == i) {
                    (true, true) => p.coupling,
                    (true, false) | (false, true) => secondary,
                    (false, false) if j == k => others * factor,
                    _ => cross * factor,
                },
            }
        };
        blocks.push(
            (0..n)
                .map(|j| (0..n).map(|k| &eye * block(j, k)).collect())
                .collect(),
        );
        let target = match kind {
            ExampleKind::Consensus => 0.0,
            ExampleKind::Symmetric => p.target,
        };
        targets.push(vec![Vector::from_element(d, target); n]);
    }
    Ok(GameSpec {
        n_players: n,
        dim: d,
        players,
        cost: CostSpec { blocks, targets },
    })
}

/// Two scalar players in a consensus game: `A = −1`, `σ = R = 1`,
/// `Q = ½`, zero references, `μ_0 = 0`, `Σ_0 = 2`.
pub fn fix_a() -> GameSpec {
    build_example(ExampleKind::Consensus, 2, 1, &ExampleParams::default()).expect("valid defaults")
}

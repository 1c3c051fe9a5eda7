//! Ready-made example models and a seeded ancestral simulator.
//!
//! Three families ship with the crate: the classic five-variable burglary
//! network, linear-Gaussian state-space models, and a planar hybrid model
//! whose drift switches with the quadrant the state is in.

use nalgebra::{DMatrix, DVector};

use crate::error::{FactorError, Result};
use crate::factor::Factor;
use crate::gaussian::{CanonicalGaussian, MomentGaussian};
use crate::hybrid::{BoxBounds, IndicatorFactor};
use crate::inference::{prev_name, FactorGraphModel, StateSpaceModel};
use crate::rng::substream_seed;
use crate::sample::SampleFactor;
use crate::table::TableFactor;
use crate::variable::{index_tuples, Scope, Variable};

/// Builds a dense table over `scope` by evaluating `f` at every index
/// tuple (canonical variable order, last variable fastest).
fn table_over(scope: Scope, f: impl Fn(&[usize]) -> f64) -> Result<TableFactor> {
    let values: Vec<f64> = index_tuples(&scope).map(|idx| f(&idx)).collect();
    TableFactor::new(scope, values)
}

/// The standard burglary network: binary B, E, A, J, M with the textbook
/// conditional probability tables. Index 0 is false, index 1 is true.
///
/// The numbers are configuration data for the example, not derived values.
pub fn burglary_model() -> FactorGraphModel {
    let b = Variable::binary("B");
    let e = Variable::binary("E");
    let a = Variable::binary("A");
    let j = Variable::binary("J");
    let m = Variable::binary("M");

    let p_b = table_over(Scope::new([b.clone()]).unwrap(), |i| {
        [0.999, 0.001][i[0]]
    })
    .unwrap();
    let p_e = table_over(Scope::new([e.clone()]).unwrap(), |i| {
        [0.998, 0.002][i[0]]
    })
    .unwrap();
    // Scope (A, B, E) in canonical order; columns are [p(A=0), p(A=1)].
    // Both sides are spelled out so the values match their usual printed
    // form exactly.
    let p_a = table_over(Scope::new([a.clone(), b.clone(), e.clone()]).unwrap(), |i| {
        let (ai, bi, ei) = (i[0], i[1], i[2]);
        let col = match (bi, ei) {
            (1, 1) => [0.05, 0.95],
            (1, 0) => [0.06, 0.94],
            (0, 1) => [0.71, 0.29],
            (0, 0) => [0.999, 0.001],
            _ => unreachable!(),
        };
        col[ai]
    })
    .unwrap();
    let p_j = table_over(Scope::new([a.clone(), j.clone()]).unwrap(), |i| {
        let col = if i[0] == 1 { [0.10, 0.90] } else { [0.95, 0.05] };
        col[i[1]]
    })
    .unwrap();
    let p_m = table_over(Scope::new([a.clone(), m.clone()]).unwrap(), |i| {
        let col = if i[0] == 1 { [0.30, 0.70] } else { [0.99, 0.01] };
        col[i[1]]
    })
    .unwrap();

    FactorGraphModel::new(
        "burglary",
        "Burglary network: alarm triggered by burglary or earthquake, \
         reported by two neighbors.",
        vec![b, e, a, j, m],
        vec![
            Factor::Table(p_b),
            Factor::Table(p_e),
            Factor::Table(p_a),
            Factor::Table(p_j),
            Factor::Table(p_m),
        ],
    )
    .expect("shipped model is well-formed")
}

/// Parameters of a time-homogeneous linear-Gaussian state-space model
///
///   x_t = A x_{t-1} + b + w,  w ~ N(0, Q)
///   y_t = C x_t + d + v,      v ~ N(0, R)
///   x_0 ~ N(m0, P0)
///
/// Vectors and matrices are indexed in the canonical (name-sorted) order of
/// the given state and observation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSpec {
    pub state: Vec<Variable>,
    pub obs: Vec<Variable>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

/// Builds the state-space model for a [`LinearGaussianSpec`].
pub fn linear_gaussian_ssm(name: &str, spec: &LinearGaussianSpec) -> Result<StateSpaceModel> {
    let state = Scope::new(spec.state.iter().cloned())?;
    let obs = Scope::new(spec.obs.iter().cloned())?;
    let ordered_state: Vec<Variable> = state.iter().cloned().collect();
    let prev_vars: Vec<Variable> = ordered_state
        .iter()
        .map(|v| Variable::continuous(prev_name(v.name())))
        .collect();
    let ordered_obs: Vec<Variable> = obs.iter().cloned().collect();

    let prior = MomentGaussian::new(state.clone(), spec.m0.clone(), spec.p0.clone(), 0.0)?
        .to_canonical()?;
    let transition = CanonicalGaussian::linear_conditional(
        &ordered_state,
        &prev_vars,
        &spec.a,
        &spec.b,
        &spec.q,
    )?;
    let observation = CanonicalGaussian::linear_conditional(
        &ordered_obs,
        &ordered_state,
        &spec.c,
        &spec.d,
        &spec.r,
    )?;
    StateSpaceModel::new(
        name,
        state,
        obs,
        Factor::Canonical(prior),
        Factor::Canonical(transition),
        Factor::Canonical(observation),
    )
}

/// The 1-D random-walk example: x' = x + w and y = x + v with unit
/// variances everywhere and a standard normal start.
pub fn lg_ssm_1d() -> StateSpaceModel {
    let spec = LinearGaussianSpec {
        state: vec![Variable::continuous("x")],
        obs: vec![Variable::continuous("y")],
        a: DMatrix::from_element(1, 1, 1.0),
        b: DVector::zeros(1),
        q: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        d: DVector::zeros(1),
        r: DMatrix::from_element(1, 1, 1.0),
        m0: DVector::zeros(1),
        p0: DMatrix::from_element(1, 1, 1.0),
    };
    linear_gaussian_ssm("lg1d", &spec).expect("shipped model is well-formed")
}

/// A 2-D linear-Gaussian model with a mild rotation-and-decay transition
/// and fully observed, noisy coordinates.
pub fn lg_ssm_2d() -> StateSpaceModel {
    let spec = LinearGaussianSpec {
        state: vec![Variable::continuous("x1"), Variable::continuous("x2")],
        obs: vec![Variable::continuous("y1"), Variable::continuous("y2")],
        a: DMatrix::from_row_slice(2, 2, &[0.95, 0.20, -0.20, 0.95]),
        b: DVector::zeros(2),
        q: DMatrix::from_row_slice(2, 2, &[0.10, 0.02, 0.02, 0.10]),
        c: DMatrix::identity(2, 2),
        d: DVector::zeros(2),
        r: DMatrix::from_row_slice(2, 2, &[0.50, 0.00, 0.00, 0.50]),
        m0: DVector::from_row_slice(&[1.0, 0.0]),
        p0: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
    };
    linear_gaussian_ssm("lg2d", &spec).expect("shipped model is well-formed")
}

/// Configuration of the quadrant-switching planar model.
///
/// The state is a position `(f1, f2)` plus the discrete quadrant label `s`;
/// each quadrant has its own drift direction, the position moves by
/// `delta * drift[s]` plus process noise per step, and `s` is the quadrant
/// containing the new position. Observations are the position plus noise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantModelConfig {
    /// Drift direction per quadrant label, `drifts[s]`.
    pub drifts: [[f64; 2]; 4],
    /// Process noise covariance.
    pub q: [[f64; 2]; 2],
    /// Observation noise covariance.
    pub r: [[f64; 2]; 2],
    /// Step scale multiplying the drift.
    pub delta: f64,
    /// Mean of the initial position.
    pub start_mean: [f64; 2],
    /// Covariance of the initial position.
    pub start_cov: [[f64; 2]; 2],
    /// Default number of simulated steps.
    pub horizon: usize,
    /// Default simulation seed.
    pub seed: u64,
}

impl Default for QuadrantModelConfig {
    /// Defaults chosen to circulate counterclockwise around the origin:
    /// each quadrant's drift points toward the next quadrant over.
    fn default() -> Self {
        let u = std::f64::consts::FRAC_1_SQRT_2;
        QuadrantModelConfig {
            drifts: [[-u, u], [-u, -u], [u, -u], [u, u]],
            q: [[0.01, 0.0], [0.0, 0.01]],
            r: [[0.05, 0.0], [0.0, 0.05]],
            delta: 0.1,
            start_mean: [1.0, 0.0],
            start_cov: [[0.01, 0.0], [0.0, 0.01]],
            horizon: 200,
            seed: 1,
        }
    }
}

fn check_spd_2x2(name: &str, m: &[[f64; 2]; 2]) -> Result<()> {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs().max(m[1][0].abs()));
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !sym || m[0][0] <= 0.0 || det <= 0.0 {
        return Err(FactorError::ConfigInvalid(format!(
            "{name} must be symmetric positive definite"
        )));
    }
    Ok(())
}

impl QuadrantModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_spd_2x2("q", &self.q)?;
        check_spd_2x2("r", &self.r)?;
        check_spd_2x2("start_cov", &self.start_cov)?;
        if !self.delta.is_finite() {
            return Err(FactorError::ConfigInvalid("delta must be finite".into()));
        }
        if self.horizon == 0 {
            return Err(FactorError::ConfigInvalid(
                "horizon must be at least 1".into(),
            ));
        }
        if self.drifts.iter().flatten().any(|d| !d.is_finite()) {
            return Err(FactorError::ConfigInvalid("drifts must be finite".into()));
        }
        Ok(())
    }
}

/// Quadrant label of a point under the half-open convention: each axis
/// boundary belongs to the nonnegative side.
pub fn quadrant_of(f1: f64, f2: f64) -> usize {
    match (f1 >= 0.0, f2 >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// The four half-open quadrant boxes over `(f1, f2)`, indexed by label.
pub fn quadrant_boxes() -> [BoxBounds; 4] {
    let inf = f64::INFINITY;
    [
        vec![(0.0, inf), (0.0, inf)],
        vec![(-inf, 0.0), (0.0, inf)],
        vec![(-inf, 0.0), (-inf, 0.0)],
        vec![(0.0, inf), (-inf, 0.0)],
    ]
}

/// Builds the hybrid quadrant state-space model for `cfg`.
///
/// State scope: `(f1, f2, s)`. The transition factor is the product of the
/// per-quadrant linear dynamics (conditioned on `s_prev`) and the indicator
/// linking `s` to the quadrant containing `(f1, f2)`; it comes out as a
/// conditional factor of truncated Gaussians over `(s, s_prev)`.
pub fn quadrant_model(cfg: &QuadrantModelConfig) -> Result<StateSpaceModel> {
    cfg.validate()?;
    let f1 = Variable::continuous("f1");
    let f2 = Variable::continuous("f2");
    let s = Variable::discrete("s", 4);
    let y1 = Variable::continuous("y1");
    let y2 = Variable::continuous("y2");
    let f1p = Variable::continuous(prev_name("f1"));
    let f2p = Variable::continuous(prev_name("f2"));
    let sp = Variable::discrete(prev_name("s"), 4);

    let q = DMatrix::from_row_slice(2, 2, &[cfg.q[0][0], cfg.q[0][1], cfg.q[1][0], cfg.q[1][1]]);
    let r = DMatrix::from_row_slice(2, 2, &[cfg.r[0][0], cfg.r[0][1], cfg.r[1][0], cfg.r[1][1]]);
    let p0 = DMatrix::from_row_slice(
        2,
        2,
        &[
            cfg.start_cov[0][0],
            cfg.start_cov[0][1],
            cfg.start_cov[1][0],
            cfg.start_cov[1][1],
        ],
    );
    let eye = DMatrix::identity(2, 2);

    // p(F_t | F_{t-1}, S_{t-1} = k): shift by the quadrant drift.
    let branches: Vec<Factor> = cfg
        .drifts
        .iter()
        .map(|d| {
            let shift = DVector::from_row_slice(&[cfg.delta * d[0], cfg.delta * d[1]]);
            CanonicalGaussian::linear_conditional(
                &[f1.clone(), f2.clone()],
                &[f1p.clone(), f2p.clone()],
                &eye,
                &shift,
                &q,
            )
            .map(Factor::Canonical)
        })
        .collect::<Result<_>>()?;
    let dynamics = Factor::Conditional(crate::hybrid::ConditionalFactor::new(
        Scope::new([sp.clone()])?,
        Scope::new([f1.clone(), f2.clone(), f1p.clone(), f2p.clone()])?,
        branches,
    )?);

    // p(S_t | F_t): deterministic quadrant membership.
    let link = Factor::Indicator(IndicatorFactor::new(
        Scope::new([s.clone()])?,
        Scope::new([f1.clone(), f2.clone()])?,
        quadrant_boxes().to_vec(),
    )?);
    let transition = dynamics.multiply(&link)?;

    let observation = Factor::Canonical(CanonicalGaussian::linear_conditional(
        &[y1.clone(), y2.clone()],
        &[f1.clone(), f2.clone()],
        &eye,
        &DVector::zeros(2),
        &r,
    )?);

    let start = MomentGaussian::new(
        Scope::new([f1.clone(), f2.clone()])?,
        DVector::from_row_slice(&cfg.start_mean),
        p0,
        0.0,
    )?
    .to_canonical()?;
    let prior = Factor::Canonical(start).multiply(&link)?;

    StateSpaceModel::new(
        "quadrant",
        Scope::new([f1, f2, s])?,
        Scope::new([y1, y2])?,
        prior,
        transition,
        observation,
    )
}

/// Noise-free quadrant dynamics iterated from the configured start:
/// `(s_t, f_t)` for `t = 0..=steps`, with `f_{t+1} = f_t + delta *
/// drifts[s_t]`. This is the closed-form reference the simulator and the
/// winding tests compare against.
pub fn quadrant_drift_trajectory(
    cfg: &QuadrantModelConfig,
    steps: usize,
) -> Vec<(usize, [f64; 2])> {
    let mut f = cfg.start_mean;
    let mut out = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let s = quadrant_of(f[0], f[1]);
        out.push((s, f));
        f = [
            f[0] + cfg.delta * cfg.drifts[s][0],
            f[1] + cfg.delta * cfg.drifts[s][1],
        ];
    }
    out
}

/// Ground truth and observations from one seeded ancestral run.
///
/// Row `t` (0-based) holds the state after `t + 1` transitions from the
/// prior draw, in canonical scope order, and the observation drawn from it.
/// Discrete values are stored as their index cast to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_scope: Scope,
    pub obs_scope: Scope,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Samples `steps` transitions and observations from the model, starting
/// from a prior draw. Deterministic per seed: the whole run consumes named
/// substreams derived from `seed`.
pub fn simulate(model: &StateSpaceModel, steps: usize, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(FactorError::ConfigInvalid(
            "simulation needs at least one step".into(),
        ));
    }
    let fwd: Vec<(String, String)> = model
        .state_scope()
        .iter()
        .map(|v| (v.name().to_string(), prev_name(v.name())))
        .collect();
    let fwd_pairs: Vec<(&str, &str)> = fwd.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let prev_names: Vec<&str> = fwd_pairs.iter().map(|(_, p)| *p).collect();
    let obs_names: Vec<&str> = model.obs_scope().iter().map(|v| v.name()).collect();

    let mut cur = SampleFactor::sample_from(
        model.prior(),
        1,
        substream_seed(seed, "simulate/init"),
        "simulate/init",
    )?;
    let mut states = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    for _ in 0..steps {
        let shifted = cur.rename(&fwd_pairs)?;
        let joint = shifted.extend(model.transition())?;
        let state = match joint.sum_out(&prev_names)? {
            Factor::Sample(s) => s,
            _ => unreachable!("partial sum-out of samples stays a sample"),
        };
        let with_obs = state.extend(model.observation())?;
        let row = with_obs.row(0);
        let state_row: Vec<f64> = model
            .state_scope()
            .iter()
            .map(|v| row[with_obs.scope().index_of(v.name()).expect("state in scope")])
            .collect();
        let obs_row: Vec<f64> = model
            .obs_scope()
            .iter()
            .map(|v| row[with_obs.scope().index_of(v.name()).expect("obs in scope")])
            .collect();
        states.push(state_row);
        observations.push(obs_row);
        // Keep the post-observation cursor so the next transition draws
        // from a fresh substream.
        cur = match Factor::Sample(with_obs).sum_out(&obs_names)? {
            Factor::Sample(s) => s,
            _ => unreachable!("partial sum-out of samples stays a sample"),
        };
    }
    Ok(Trajectory {
        state_scope: model.state_scope().clone(),
        obs_scope: model.obs_scope().clone(),
        states,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{filter, summarize, variable_elimination, ProjectionPolicy};
    use crate::variable::Assignment;

    #[test]
    fn hybrid_parametric_filter_runs_on_quadrant_data() {
        // The parametric lane: prior projected to conditional-of-Gaussian
        // form, moment matching after every step. Checks structure and
        // normalization, not tracking accuracy.
        let cfg = QuadrantModelConfig::default();
        let model = quadrant_model(&cfg).unwrap();
        let run = simulate(&model, 12, 7).unwrap();
        let i1 = run.obs_scope.index_of("y1").unwrap();
        let i2 = run.obs_scope.index_of("y2").unwrap();
        let obs: Vec<Assignment> = run
            .observations
            .iter()
            .map(|r| Assignment::new().with("y1", r[i1]).with("y2", r[i2]))
            .collect();
        let projected = ProjectionPolicy::MomentMatch
            .apply(model.prior().clone())
            .unwrap();
        let model = model.with_prior(projected).unwrap();
        let out = filter(&model, &obs, &ProjectionPolicy::MomentMatch).unwrap();
        assert_eq!(out.posteriors.len(), 12);
        assert!(out.total_loglik.is_finite());
        for p in &out.posteriors {
            let s = summarize(p).unwrap();
            assert_eq!(s.continuous.len(), 2);
            assert_eq!(s.discrete.len(), 1);
            let total: f64 = s.discrete[0].probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn burglary_joint_mass_is_one() {
        let model = burglary_model();
        let mut joint = model.factors()[0].clone();
        for f in &model.factors()[1..] {
            joint = joint.multiply(f).unwrap();
        }
        assert!((joint.mass().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn burglary_prior_marginal_is_the_cpt() {
        let model = burglary_model();
        let q = Scope::new([Variable::binary("B")]).unwrap();
        let post = variable_elimination(&model, &q, &Assignment::new()).unwrap();
        let s = summarize(&post).unwrap();
        assert!((s.discrete[0].probs[0] - 0.999).abs() < 1e-12);
        assert!((s.discrete[0].probs[1] - 0.001).abs() < 1e-12);
    }

    #[test]
    fn quadrant_labels_follow_the_half_open_convention() {
        assert_eq!(quadrant_of(0.5, -0.2), 3);
        assert_eq!(quadrant_of(0.0, 0.0), 0);
        assert_eq!(quadrant_of(-0.0001, 0.0), 1);
        assert_eq!(quadrant_of(-1.0, -1.0), 2);
    }

    #[test]
    fn quadrant_boxes_partition_the_plane() {
        // Every probe point lies in exactly one box, and it is the box of
        // its label.
        let boxes = quadrant_boxes();
        let probes = [
            (0.3, 0.7),
            (-0.3, 0.7),
            (-0.3, -0.7),
            (0.3, -0.7),
            (0.0, 0.0),
            (0.0, -1.0),
            (-2.0, 0.0),
            (5.0, 5.0),
        ];
        for (x, y) in probes {
            let mut hits = 0;
            for (k, b) in boxes.iter().enumerate() {
                let inside =
                    x >= b[0].0 && x < b[0].1 && y >= b[1].0 && y < b[1].1;
                if inside {
                    hits += 1;
                    assert_eq!(k, quadrant_of(x, y), "point ({x}, {y})");
                }
            }
            assert_eq!(hits, 1, "point ({x}, {y})");
        }
    }

    #[test]
    fn drift_trajectory_circulates_counterclockwise() {
        let cfg = QuadrantModelConfig::default();
        let path = quadrant_drift_trajectory(&cfg, cfg.horizon);
        // Winding angle accumulated over the path exceeds one revolution.
        let mut winding = 0.0;
        for w in path.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            let cross = a[0] * b[1] - a[1] * b[0];
            let dot = a[0] * b[0] + a[1] * b[1];
            winding += cross.atan2(dot);
        }
        assert!(
            winding > 2.0 * std::f64::consts::PI,
            "winding {winding} too small"
        );
        // Labels cycle 0 -> 1 -> 2 -> 3 -> 0 without skips.
        for w in path.windows(2) {
            let (s0, s1) = (w[0].0, w[1].0);
            assert!(s1 == s0 || s1 == (s0 + 1) % 4, "jumped {s0} -> {s1}");
        }
    }

    #[test]
    fn quadrant_model_rejects_bad_covariances() {
        let mut cfg = QuadrantModelConfig::default();
        cfg.q = [[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(
            quadrant_model(&cfg).unwrap_err().code(),
            "ConfigInvalid"
        );
        let mut cfg = QuadrantModelConfig::default();
        cfg.r = [[1.0, 2.0], [2.0, 1.0]]; // indefinite
        assert_eq!(
            quadrant_model(&cfg).unwrap_err().code(),
            "ConfigInvalid"
        );
    }

    #[test]
    fn simulate_is_deterministic_per_seed() {
        let model = lg_ssm_1d();
        let a = simulate(&model, 10, 99).unwrap();
        let b = simulate(&model, 10, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, 10, 100).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn near_zero_noise_tracks_the_drift_oracle() {
        // Noise variances sit just above the Cholesky pivot floor, so the
        // run is as deterministic as the factor algebra allows. The start
        // must be strictly inside a quadrant: on a boundary the truncated
        // prior splits its mass across two labels no matter how small the
        // noise, and the first drift becomes a coin flip.
        let mut cfg = QuadrantModelConfig::default();
        cfg.q = [[1e-8, 0.0], [0.0, 1e-8]];
        cfg.r = [[1e-8, 0.0], [0.0, 1e-8]];
        cfg.start_cov = [[1e-8, 0.0], [0.0, 1e-8]];
        cfg.start_mean = [0.94, 0.34];
        let model = quadrant_model(&cfg).unwrap();
        let t = 60;
        let run = simulate(&model, t, 4).unwrap();
        let oracle = quadrant_drift_trajectory(&cfg, t);
        let scope = run.state_scope.clone();
        let i_f1 = scope.index_of("f1").unwrap();
        let i_f2 = scope.index_of("f2").unwrap();
        let i_s = scope.index_of("s").unwrap();
        for (row, want) in run.states.iter().zip(&oracle[1..]) {
            assert!((row[i_f1] - want.1[0]).abs() < 1e-2);
            assert!((row[i_f2] - want.1[1]).abs() < 1e-2);
            assert_eq!(row[i_s] as usize, want.0);
        }
        // Observations collapse onto the states.
        for (srow, orow) in run.states.iter().zip(&run.observations) {
            assert!((srow[i_f1] - orow[0]).abs() < 1e-3);
            assert!((srow[i_f2] - orow[1]).abs() < 1e-3);
        }
    }

    #[test]
    fn simulated_quadrant_state_is_consistent_with_position() {
        let cfg = QuadrantModelConfig::default();
        let model = quadrant_model(&cfg).unwrap();
        let run = simulate(&model, 50, cfg.seed).unwrap();
        let scope = run.state_scope.clone();
        let i_f1 = scope.index_of("f1").unwrap();
        let i_f2 = scope.index_of("f2").unwrap();
        let i_s = scope.index_of("s").unwrap();
        for row in &run.states {
            assert_eq!(row[i_s] as usize, quadrant_of(row[i_f1], row[i_f2]));
        }
    }
}

//! Numerical checks of the optimality and convergence results on finite
//! discrete games: each atom `J_s` carries its own success probability `p_s`
//! and discriminator value `d_s`, so the pointwise statements can be tested
//! atom by atom.

use std::fmt::Write as _;

use crate::diffcore::init::streams;
use crate::diffcore::{Adam, Graph, Rng, Tensor};
use crate::error::{Error, Result};
use crate::models::{build_discriminator, desk_discriminator, DiscriminatorInit};
use crate::train::losses::discriminator_loss_graph;
use crate::train::LossVariant;

/// Grid resolution of the brute-force discriminator search.
pub const GRID_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGame {
    pub p_g: Vec<f64>,
    pub d: Vec<f64>,
}

impl DiscreteGame {
    pub fn new(p_g: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if p_g.len() != d.len() {
            return Err(Error::contract(
                "theory-verify",
                format!(
                    "{} probabilities for {} discriminator values",
                    p_g.len(),
                    d.len()
                ),
            ));
        }
        if let Some(v) = p_g.iter().chain(&d).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(
                "theory-verify",
                format!("value {v} outside [0, 1]"),
            ));
        }
        Ok(Self { p_g, d })
    }

    /// `atoms` random atoms with uniform `p_g` and `d`.
    pub fn random(atoms: usize, rng: &mut Rng) -> Self {
        let p_g = (0..atoms).map(|_| rng.uniform(0.0, 1.0) as f64).collect();
        let d = (0..atoms).map(|_| rng.uniform(0.0, 1.0) as f64).collect();
        Self { p_g, d }
    }

    pub fn len(&self) -> usize {
        self.p_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_g.is_empty()
    }
}

/// Pointwise discriminator loss at one atom. Terms with a zero coefficient
/// are dropped so `0 · log 0` never appears.
pub fn pointwise_discriminator_loss(p: f64, d: f64, variant: LossVariant) -> f64 {
    match variant {
        LossVariant::LeastSquares => p * (d - 1.0).powi(2) + (1.0 - p) * d * d,
        LossVariant::CrossEntropy => {
            let mut total = 0.0;
            if p > 0.0 {
                total -= p * d.ln();
            }
            if p < 1.0 {
                total -= (1.0 - p) * (1.0 - d).ln();
            }
            total
        }
    }
}

/// Least-squares discriminator loss of the game in its direct form and in
/// the completed-square form `Σ (d - p)² + Σ p(1 - p)`.
pub fn least_squares_forms(game: &DiscreteGame) -> (f64, f64) {
    let direct = game
        .p_g
        .iter()
        .zip(&game.d)
        .map(|(&p, &d)| pointwise_discriminator_loss(p, d, LossVariant::LeastSquares))
        .sum();
    let square: f64 = game
        .p_g
        .iter()
        .zip(&game.d)
        .map(|(p, d)| (d - p).powi(2))
        .sum();
    let constant: f64 = game.p_g.iter().map(|p| p * (1.0 - p)).sum();
    (direct, square + constant)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalDiscriminator {
    pub analytic: Vec<f64>,
    pub grid: Vec<f64>,
}

impl OptimalDiscriminator {
    pub fn max_deviation(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.grid)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Analytic optimum `d* = p_g` per atom alongside the minimizer of the
/// pointwise loss over the grid `{0, 0.001, ..., 1}`.
pub fn optimal_discriminator(game: &DiscreteGame, variant: LossVariant) -> OptimalDiscriminator {
    let steps = (1.0 / GRID_STEP).round() as usize;
    let grid = game
        .p_g
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=steps {
                let d = k as f64 * GRID_STEP;
                let loss = pointwise_discriminator_loss(p, d, variant);
                if loss < best.0 {
                    best = (loss, d);
                }
            }
            best.1
        })
        .collect();
    OptimalDiscriminator {
        analytic: game.p_g.clone(),
        grid,
    }
}

/// Generator objective once the discriminator sits at its optimum `d = p`.
pub fn generator_objective(p: f64, variant: LossVariant) -> f64 {
    match variant {
        LossVariant::LeastSquares => (p - 1.0).powi(2),
        LossVariant::CrossEntropy => -p.ln(),
    }
}

/// Derivative of [`generator_objective`] in `p`.
pub fn generator_gradient(p: f64, variant: LossVariant) -> f64 {
    match variant {
        LossVariant::LeastSquares => 2.0 * (p - 1.0),
        LossVariant::CrossEntropy => -1.0 / p,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    /// `trajectory[t][s]` is `p_g` of atom `s` after `t` updates.
    pub trajectory: Vec<Vec<f64>>,
    /// Summed generator objective at each point of the trajectory.
    pub objective: Vec<f64>,
    /// Some atom's `p_g` decreased between consecutive iterates.
    pub oscillated: bool,
}

impl Descent {
    pub fn last(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory holds the start")
    }

    pub fn objective_nonincreasing(&self) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

/// Alternates the optimal discriminator `d = p_g` with a clamped gradient
/// step on `p_g`.
pub fn generator_descent(
    game: &DiscreteGame,
    step: f64,
    iters: usize,
    variant: LossVariant,
) -> Result<Descent> {
    if !(step > 0.0) {
        return Err(Error::contract(
            "theory-verify",
            format!("step {step} must be positive"),
        ));
    }
    if let Some(p) = game.p_g.iter().find(|&&p| p <= 0.0) {
        return Err(Error::contract(
            "theory-verify",
            format!("start {p} outside (0, 1]"),
        ));
    }
    let total = |p: &[f64]| {
        p.iter()
            .map(|&v| generator_objective(v, variant))
            .sum::<f64>()
    };
    let mut p = game.p_g.clone();
    let mut trajectory = vec![p.clone()];
    let mut objective = vec![total(&p)];
    let mut oscillated = false;
    for _ in 0..iters {
        let next: Vec<f64> = p
            .iter()
            .map(|&v| {
                let d = v;
                (v - step * generator_gradient(d, variant)).clamp(0.0, 1.0)
            })
            .collect();
        oscillated |= next.iter().zip(&p).any(|(a, b)| a < b);
        objective.push(total(&next));
        trajectory.push(next.clone());
        p = next;
    }
    Ok(Descent {
        trajectory,
        objective,
        oscillated,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalOptimum {
    pub fraction: f64,
    pub output: f64,
    pub steps: usize,
}

impl EmpiricalOptimum {
    pub fn deviation(&self) -> f64 {
        (self.output - self.fraction).abs()
    }
}

/// Trains a fresh discriminator alone on `copies` copies of one random image,
/// a `fraction` of them labelled positive, and reports its output. Stops
/// early once the output has stayed within `tol / 4` of the fraction for 20
/// consecutive steps.
pub fn empirical_optimum_check(
    fraction: f64,
    copies: usize,
    variant: LossVariant,
    max_steps: usize,
    tol: f64,
    seed: u64,
) -> Result<EmpiricalOptimum> {
    let positives = (fraction * copies as f64).round() as usize;
    if copies == 0 || (positives as f64 - fraction * copies as f64).abs() > 1e-9 {
        return Err(Error::contract(
            "theory-verify",
            format!("fraction {fraction} is not a multiple of 1/{copies}"),
        ));
    }
    let spec = desk_discriminator();
    let (c, h, w) = spec.input;
    let mut rng = Rng::new(seed, streams::INIT);
    let mut d = build_discriminator(spec, DiscriminatorInit::Fresh, &mut rng)?;
    let mut data_rng = Rng::new(seed, streams::DATA);
    let one: Vec<f32> = (0..c * h * w).map(|_| data_rng.uniform(0.0, 1.0)).collect();
    let images = Tensor::new(vec![copies, c, h, w], one.repeat(copies))?;
    let targets: Vec<u8> = (0..copies).map(|i| (i < positives) as u8).collect();
    let adam = Adam::new(1e-3)?;
    let mut output = f64::NAN;
    let mut settled = 0;
    let mut steps = 0;
    while steps < max_steps {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let o = d.forward(&mut g, x)?;
        output = g.value(o).data()[0] as f64;
        if (output - fraction).abs() < tol / 4.0 {
            settled += 1;
            if settled >= 20 {
                break;
            }
        } else {
            settled = 0;
        }
        let loss = discriminator_loss_graph(&mut g, o, &targets, variant)?;
        let grads = g.backward(loss)?;
        d.load_gradients(&grads);
        adam.step(d.params_mut());
        steps += 1;
    }
    Ok(EmpiricalOptimum {
        fraction,
        output,
        steps,
    })
}

/// One line of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn bound(name: impl Into<String>, deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

const STARTS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Grid oracle over `games` random games plus the completed-square identity.
pub fn discriminator_checks(games: usize, seed: u64) -> Vec<Check> {
    let mut rng = Rng::new(seed, streams::DATA);
    let games: Vec<DiscreteGame> = (0..games)
        .map(|_| DiscreteGame::random(8, &mut rng))
        .collect();
    let mut out = Vec::new();
    for variant in [LossVariant::LeastSquares, LossVariant::CrossEntropy] {
        let worst = games
            .iter()
            .map(|g| optimal_discriminator(g, variant).max_deviation())
            .fold(0.0, f64::max);
        out.push(Check::bound(
            format!("optimal discriminator ({variant})"),
            worst,
            GRID_STEP,
        ));
    }
    let identity = games
        .iter()
        .map(|g| {
            let (a, b) = least_squares_forms(g);
            (a - b).abs()
        })
        .fold(0.0, f64::max);
    out.push(Check::bound(
        "least-squares completed square",
        identity,
        1e-9,
    ));
    out
}

/// Descent from every start in `{0.1, ..., 0.9}`; the deviation is `1 - min p_g`
/// after `iters` steps, and oscillation or a rising objective fails the check.
pub fn descent_checks(step: f64, iters: usize) -> Result<Vec<Check>> {
    let game = DiscreteGame::new(STARTS.to_vec(), STARTS.to_vec())?;
    let mut out = Vec::new();
    for variant in [LossVariant::LeastSquares, LossVariant::CrossEntropy] {
        let run = generator_descent(&game, step, iters, variant)?;
        let worst = run.last().iter().map(|p| 1.0 - p).fold(0.0, f64::max);
        let mut check = Check::bound(format!("generator descent ({variant})"), worst, 1e-3);
        check.passed &= !run.oscillated && run.objective_nonincreasing();
        out.push(check);
    }
    Ok(out)
}

pub fn empirical_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for variant in [LossVariant::LeastSquares, LossVariant::CrossEntropy] {
        for fraction in [0.25, 0.5, 1.0] {
            let r = empirical_optimum_check(fraction, 8, variant, 3000, 0.02, seed)?;
            out.push(Check::bound(
                format!("empirical optimum p={fraction} ({variant})"),
                r.deviation(),
                0.02,
            ));
        }
    }
    Ok(out)
}

/// All checks, cheapest first.
pub fn verify_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = discriminator_checks(100, seed);
    out.extend(descent_checks(0.1, 200)?);
    out.extend(empirical_checks(seed)?);
    Ok(out)
}

pub fn render_checks(checks: &[Check]) -> String {
    let width = checks
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>12}  {:>9}  result",
        "check", "max dev", "tol"
    );
    let _ = writeln!(s, "{}", "-".repeat(width + 35));
    for c in checks {
        let verdict = if c.passed { "pass" } else { "FAIL" };
        let _ = writeln!(
            s,
            "{:<width$}  {:>12.3e}  {:>9.1e}  {verdict}",
            c.name, c.deviation, c.tolerance
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use LossVariant::*;

    #[test]
    fn spot_optimum() {
        let game = DiscreteGame::new(vec![0.7], vec![0.1]).unwrap();
        for variant in [LeastSquares, CrossEntropy] {
            let r = optimal_discriminator(&game, variant);
            assert_eq!(r.analytic, vec![0.7]);
            assert!((r.grid[0] - 0.7).abs() <= GRID_STEP);
        }
    }

    #[test]
    fn endpoints_avoid_log_of_zero() {
        let game = DiscreteGame::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let r = optimal_discriminator(&game, CrossEntropy);
        assert_eq!(r.grid, vec![0.0, 1.0]);
    }

    #[test]
    fn least_squares_descent_from_low_start() {
        let game = DiscreteGame::new(vec![0.2], vec![0.2]).unwrap();
        let run = generator_descent(&game, 0.1, 200, LeastSquares).unwrap();
        assert!(!run.oscillated);
        assert!(run.trajectory.windows(2).all(|w| w[1][0] >= w[0][0]));
        let first = run
            .trajectory
            .iter()
            .position(|p| 1.0 - p[0] < 1e-3)
            .unwrap();
        assert!(first <= 200);
        assert!(run.objective_nonincreasing());
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let game = DiscreteGame::new(vec![1.0], vec![1.0]).unwrap();
        for variant in [LeastSquares, CrossEntropy] {
            let run = generator_descent(&game, 0.1, 10, variant).unwrap();
            assert!(run.trajectory.iter().all(|p| p[0] == 1.0));
        }
    }

    #[test]
    fn oversized_step_is_clamped() {
        let game = DiscreteGame::new(vec![0.5], vec![0.5]).unwrap();
        let run = generator_descent(&game, 5.0, 5, LeastSquares).unwrap();
        assert_eq!(run.last(), &[1.0]);
        assert!(generator_descent(&game, 0.0, 5, LeastSquares).is_err());
    }

    #[test]
    fn invalid_games_are_rejected() {
        assert!(DiscreteGame::new(vec![1.2], vec![0.5]).is_err());
        assert!(DiscreteGame::new(vec![0.2], vec![]).is_err());
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use reflow::analysis::{run_ensemble, summarize_ensemble, uniform_grid, Engine};
use reflow::sde::{integrate_with_normals, ou_mean_analytic, ou_variance_at, SimConfig};
use reflow::skorokhod::{check_complementarity, ReflectedPair, BOUNDARY_TOL};
use reflow::{AgentSpec, DomainBox, ReflectionMode, RepulsionSpec, SystemSpec};

fn free_agent(horizon: f64) -> SystemSpec {
    let unbounded = DomainBox::new(vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2]).unwrap();
    SystemSpec::new(
        vec![AgentSpec::new([1.0, 0.0], 3.0, 0.5, [2.0, 1.0])],
        unbounded,
        RepulsionSpec::none(),
        horizon,
        ReflectionMode::Projection,
        50.0,
    )
    .unwrap()
}

#[test]
fn ensemble_mean_tracks_the_analytic_mean_on_the_grid() {
    let system = free_agent(1.0);
    let config = SimConfig::new(1e-3, 1000, ReflectionMode::Projection).unwrap();
    let grid = uniform_grid(1.0, 11);
    let runs = 4000;
    let ens = run_ensemble(&system, &Engine::Ou(config), &grid, runs, 11).unwrap();
    let summary = summarize_ensemble(&ens).unwrap();
    for (k, &t) in grid.iter().enumerate().skip(1) {
        let exact = ou_mean_analytic(3.0, [1.0, 0.0], [2.0, 1.0], t);
        let se = ou_variance_at(3.0, 0.5, t).sqrt() / (runs as f64).sqrt();
        for (c, (m, e)) in summary.mean[0].value(k).iter().zip(exact).enumerate() {
            let err = (m - e).abs();
            assert!(err <= 3.0 * se, "t={t} c={c}: error {err} vs se {se}");
        }
    }
}

#[test]
fn halving_dt_on_a_shared_brownian_path_moves_the_mean_by_under_one_standard_error() {
    let system = free_agent(1.0);
    let coarse = SimConfig::new(1e-3, 1000, ReflectionMode::Projection).unwrap();
    let fine = SimConfig::new(5e-4, 2000, ReflectionMode::Projection).unwrap();
    let runs = 10_000;
    let (mut sum_c, mut sum_f, mut sum_sq) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    for r in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(r);
        let draws: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Coarse step k for coordinate c combines fine steps 2k and 2k+1.
        let mut idx = 0;
        let coarse_path = integrate_with_normals(&system, &coarse, || {
            let (step, c) = (idx / 2, idx % 2);
            idx += 1;
            (draws[4 * step + c] + draws[4 * step + 2 + c]) / 2f64.sqrt()
        })
        .unwrap();
        let mut it = draws.iter();
        let fine_path = integrate_with_normals(&system, &fine, || *it.next().unwrap()).unwrap();
        let (xc, xf) = (
            coarse_path[0].trajectory.last(),
            fine_path[0].trajectory.last(),
        );
        for c in 0..2 {
            sum_c[c] += xc[c];
            sum_f[c] += xf[c];
            sum_sq[c] += xf[c] * xf[c];
        }
    }
    let r = runs as f64;
    for c in 0..2 {
        let mean_f = sum_f[c] / r;
        let se = ((sum_sq[c] / r - mean_f * mean_f) / r).sqrt();
        let shift = (sum_c[c] / r - mean_f).abs();
        assert!(shift < se, "coordinate {c}: shift {shift} vs se {se}");
    }
}

#[test]
fn crowd_runs_stay_confined_with_complementary_regulators() {
    let cfg = reflow::config::ExperimentConfig::crowd();
    let system = cfg.system().unwrap();
    let config = SimConfig::for_system(&system, 1e-3).unwrap();
    for r in 0..20 {
        let paths =
            reflow::sde::integrate_reflected_ou(&system, &config, reflow::NoiseSeed::new(9, r))
                .unwrap();
        for p in &paths {
            assert!(p.trajectory.values().all(|x| system.domain().contains(x)));
            let pair = ReflectedPair {
                reflected: p.trajectory.clone(),
                regulator: p.regulator.clone(),
                tv: vec![],
            };
            assert!(check_complementarity(&pair, system.domain(), BOUNDARY_TOL).unwrap());
        }
    }
}

#[test]
fn penalty_mode_reports_but_tolerates_excursions() {
    let system = reflow::config::ExperimentConfig::crowd()
        .system()
        .unwrap()
        .with_reflection(ReflectionMode::Penalty)
        .unwrap();
    let config = SimConfig::for_system(&system, 1e-3).unwrap();
    let grid = uniform_grid(2.0, 201);
    let ens = run_ensemble(&system, &Engine::Ou(config), &grid, 50, 1).unwrap();
    let summary = summarize_ensemble(&ens).unwrap();
    // Stiff penalty keeps the ensemble mean inside the box even if single states leave it.
    for m in &summary.mean {
        assert!(m.values().all(|x| x[1] > -0.05 && x[0] > 0.0 && x[0] < 2.5));
    }
}

//! Scratch diagnostics round 6 (not part of the deliverable).

use disorder_stop::expectation::{value_integral, McConfig};
use disorder_stop::grid::uniform_grid;
use disorder_stop::model::{DisorderModel, ProblemKind, StopProblem, UniformPrior};
use disorder_stop::rng::{derive_seed, tag};
use disorder_stop::simulate::PathBatch;
use disorder_stop::solve_boundary;
use disorder_stop::validate::{dominance_check, evaluate_policy, StoppingRule};

fn main() {
    let model = DisorderModel::new(1.0, -1.0, 1.0, 1.0).unwrap();
    let prior = UniformPrior::new(0.0, 1.0, 1.0).unwrap();
    let lin = StopProblem::linear(&model, &prior).unwrap();
    let geo = StopProblem::geometric(&model, &prior).unwrap();
    let grid = uniform_grid(1.0, 200);
    let mc_solve = McConfig { seed: 42, n_paths: 20_000 };
    let mc_eval = McConfig { seed: 4242, n_paths: 200_000 };

    let (bl, rl) = solve_boundary(&lin, &grid, &mc_solve).unwrap();
    let (bg, rg) = solve_boundary(&geo, &grid, &mc_solve).unwrap();
    println!("linear a(0) = {:.4}, proj nodes {}, max shift {:.4}", bl.values()[0], rl.projected_nodes.len(), rl.max_projection_shift);
    println!("geometric a(0) = {:.4}, proj nodes {}, max shift {:.4}", bg.values()[0], rg.projected_nodes.len(), rg.max_projection_shift);

    let vb = PathBatch::new(derive_seed(mc_eval.seed, tag::VALUE, 0), mc_eval.n_paths, grid.clone()).unwrap();
    let va = value_integral(&lin, &bl, &vb).unwrap();
    let vg = value_integral(&geo, &bg, &vb).unwrap();
    let v_lin = (lin.map_value(va.value), lin.payoff_scale * va.std_error);
    let v_geo = (geo.map_value(vg.value), geo.payoff_scale * vg.std_error);
    println!("V_lin occupation = {:.5} +- {:.5}", v_lin.0, v_lin.1);
    println!("V_geo occupation = {:.5} +- {:.5}", v_geo.0, v_geo.1);

    let pl = evaluate_policy(&model, &prior, ProblemKind::Linear, &StoppingRule::Curve(bl.clone()), &grid, &mc_eval).unwrap();
    let pg = evaluate_policy(&model, &prior, ProblemKind::Geometric, &StoppingRule::Curve(bg.clone()), &grid, &mc_eval).unwrap();
    println!("raw lin = {:.5} +- {:.5} fracT {:.4}", pl.mean, pl.std_error, pl.frac_at_horizon);
    println!("raw geo = {:.5} +- {:.5} fracT {:.4}", pg.mean, pg.std_error, pg.frac_at_horizon);
    println!("gap lin = {:.5} ({:.1} sigma)", v_lin.0 - pl.mean, (v_lin.0 - pl.mean) / v_lin.1.hypot(pl.std_error));
    println!("gap geo = {:.5} ({:.1} sigma)", v_geo.0 - pg.mean, (v_geo.0 - pg.mean) / v_geo.1.hypot(pg.std_error));

    let dl = dominance_check(&model, &prior, ProblemKind::Linear, &bl, &mc_eval).unwrap();
    println!("dominance lin: solved {:.4} pass {} alts {:?}", dl.solved.mean, dl.pass,
        dl.alternatives.iter().map(|(n, e)| format!("{n}={:.4}", e.mean)).collect::<Vec<_>>());
    let dg = dominance_check(&model, &prior, ProblemKind::Geometric, &bg, &mc_eval).unwrap();
    println!("dominance geo: solved {:.4} pass {} alts {:?}", dg.solved.mean, dg.pass,
        dg.alternatives.iter().map(|(n, e)| format!("{n}={:.4}", e.mean)).collect::<Vec<_>>());

    // dichotomy at two grids
    let grid400 = uniform_grid(1.0, 400);
    let (bl4, _) = solve_boundary(&lin, &grid400, &mc_solve).unwrap();
    let (bg4, _) = solve_boundary(&geo, &grid400, &mc_solve).unwrap();
    let pl4 = evaluate_policy(&model, &prior, ProblemKind::Linear, &StoppingRule::Curve(bl4), &grid400, &mc_eval).unwrap();
    let pg4 = evaluate_policy(&model, &prior, ProblemKind::Geometric, &StoppingRule::Curve(bg4), &grid400, &mc_eval).unwrap();
    println!("fracT grid200: lin {:.4} geo {:.4}", pl.frac_at_horizon, pg.frac_at_horizon);
    println!("fracT grid400: lin {:.4} geo {:.4}", pl4.frac_at_horizon, pg4.frac_at_horizon);

    // refinement stability at solve defaults
    for (n, paths) in [(25usize, 20_000usize), (25, 4_000)] {
        let mcs = McConfig { seed: 13, n_paths: paths };
        let (c, _) = solve_boundary(&lin, &uniform_grid(1.0, n), &mcs).unwrap();
        let (f, _) = solve_boundary(&lin, &uniform_grid(1.0, 2 * n), &mcs).unwrap();
        let mut worst = (0.0f64, 0.0f64);
        for (k, &t) in c.grid().iter().enumerate() {
            let d = (c.values()[k] - f.value_at(t)).abs();
            if d > worst.0 {
                worst = (d, t);
            }
        }
        println!("refinement n={n} paths={paths}: worst delta {:.4} at t = {}", worst.0, worst.1);
    }
}

use nalgebra::DVector;
use optliq::cara::solve_cara;
use optliq::dp::{solve_surface, solve_value, Axis, SolverGrid};
use optliq::model::{ImpactFunction, MarketModel, Utility};
use optliq::numerics::log_add_exp;

fn main() {
    let model = MarketModel::scalar(0.1, 0.3, 1.0).unwrap();
    let impact = ImpactFunction::quadratic(0.5).unwrap();
    let x0 = DVector::from_element(1, 10.0);
    let mk_grid = |level: u32, nr: f64| SolverGrid::new(
        level, 1.0,
        vec![Axis::spanning(-0.5, 10.5, 40.0 / 128.0 / 8.0).unwrap()],
        nr, 12, 40.0, 2.0, 7,
    ).unwrap();

    // Criterion-2 shape: Cara(1) at L7 and L8.
    let u = Utility::cara(1.0).unwrap();
    let bench = solve_cara(1.0, &model, &impact, 1.0, &x0, 0.0, 2048).unwrap();
    let w_bench = log_add_exp(optliq::dp::surface_offset(&u).ln(), bench.log_neg_value);
    for level in [7u32, 8] {
        let grid = mk_grid(level, 16.0);
        let t0 = std::time::Instant::now();
        let out = solve_value(&model, &impact, &u, &grid, &x0, 0.0).unwrap();
        let gap = out.w_top - w_bench;
        println!(
            "cara L={level} -> gap rel {:.3}%  monitor {:.5}%  resid {:.2e}  ({:.1} s)",
            (gap.exp() - 1.0) * 100.0, out.clamp_share * 100.0,
            out.max_sampled_residual, t0.elapsed().as_secs_f64()
        );
    }

    // Mixture sandwich margins at production scale.
    let um = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
    let (a1, a2) = um.ara();
    for nr_radius in [16.0f64] {
    let grid = mk_grid(7, nr_radius);
    let t0 = std::time::Instant::now();
    let surface = solve_surface(&model, &impact, &um, &grid).unwrap();
    println!("mixture L7 surface solved in {:.1} s, monitor {:.5}%", t0.elapsed().as_secs_f64(), surface.clamp_share() * 100.0);
    let t0 = std::time::Instant::now();
    let nrn = grid.r_axis().count;
    let nx = grid.n_x_nodes();
    let r_axis = grid.r_axis();
    let mut worst = f64::INFINITY;
    use rayon::prelude::*;
    let costs: Vec<(f64, f64)> = (0..(surface.n_layers() - 1) * nx).into_par_iter().map(|pair| {
        let layer = pair / nx + 1;
        let ix = pair % nx;
        let t_rem = layer as f64 * grid.dt();
        let x = DVector::from_element(1, grid.x_axes[0].value(ix));
        let c1 = solve_cara(a1, &model, &impact, t_rem, &x, 0.0, 24).unwrap().cost;
        let c2 = solve_cara(a2, &model, &impact, t_rem, &x, 0.0, 24).unwrap().cost;
        (c1, c2)
    }).collect();
    for layer in 1..surface.n_layers() {
        for ix in 0..nx {
            let (c1, c2) = costs[(layer - 1) * nx + ix];
            for ir in 0..nrn {
                let w = surface.w_at(layer, ix, ir);
                if !w.is_finite() { continue; }
                let r = r_axis.value(ir);
                let lower = log_add_exp(surface.offset.ln(), a2 * (c2 - r)) - w;
                if lower < worst { worst = lower; }
                let t = surface.offset - 1.0 / a1;
                let q1 = a1 * (c1 - r);
                let ratio = (-t).ln() - q1;
                let upper = if ratio >= 0.0 { f64::INFINITY } else { w - (q1 + (-(ratio.exp())).ln_1p()) };
                if upper < worst { worst = upper; }
            }
        }
    }
    println!("Nr={nr_radius} mixture sandwich worst margin {:+.4} (check took {:.1} s)", worst, t0.elapsed().as_secs_f64());
    }
}

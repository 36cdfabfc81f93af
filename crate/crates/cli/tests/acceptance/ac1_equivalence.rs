use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepba::ba::{solve_ba, SolverConfig};
use sepba::joint::solve_joint_oracle;
use sepba::sim::perturb_trajectory;
use sepba::trajectory::Trajectory;

use crate::support::{max_difference, problem, random_poses, sensor, smooth_world, Criterion};

const RESOLUTIONS: [f64; 3] = [1.0, 0.55, 0.3];

fn tight() -> SolverConfig {
    SolverConfig {
        max_iterations: 100,
        update_tolerance: 1e-10,
        cost_rel_tolerance: 1e-15,
        max_damping_retries: 15,
        ..SolverConfig::default()
    }
}

struct Run {
    dt: f64,
    dr: f64,
    converged: bool,
    reduced_nnz: usize,
    joint_nnz: usize,
    cells: usize,
}

fn run(noise: f64, res: f64) -> Run {
    let world = smooth_world(21, 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = random_poses(&mut rng, 11, 0.8);
    let init = perturb_trajectory(&Trajectory::from_poses(truth.clone(), 1.0), 0.2, 0.5, 3).pose_list();
    let p = problem(&world, &truth, &init, &sensor(41, 0.25, noise), 7, res);
    let reduced = solve_ba(&p, &tight()).unwrap();
    let joint = solve_joint_oracle(&p, &tight()).unwrap();
    let (dt, dr) = max_difference(&reduced.trajectory, &joint.trajectory);
    Run {
        dt,
        dr,
        converged: reduced.report.converged && joint.report.converged,
        reduced_nnz: reduced.report.h_nnz,
        joint_nnz: joint.report.h_nnz,
        cells: joint.cells.len(),
    }
}

#[test]
fn ac1_reduced_and_joint_solvers_agree() {
    let c = Criterion::start(1, 60);
    let runs: Vec<Run> = RESOLUTIONS.iter().map(|&r| run(0.0, r)).collect();
    let worst_t = runs.iter().map(|r| r.dt).fold(0.0, f64::max);
    let worst_r = runs.iter().map(|r| r.dr).fold(0.0, f64::max);
    let agree = runs.iter().all(|r| r.converged) && worst_t < 1e-6 && worst_r < 1e-6;
    let reduced_constant = runs.iter().all(|r| r.reduced_nnz == runs[0].reduced_nnz);
    let joint_grows = runs.windows(2).all(|w| w[1].joint_nnz > w[0].joint_nnz);
    let span = runs[2].cells as f64 / runs[0].cells as f64;

    // with noise, bilinear kinks separate the two fixed points slightly; shown, not gated
    let noisy = run(0.01, 0.55);
    println!(
        "AC1 note: noisy instance differs by {:.2e} m / {:.2e} rad",
        noisy.dt, noisy.dr
    );
    let nnz: Vec<String> = runs
        .iter()
        .map(|r| format!("{} cells: reduced {} joint {}", r.cells, r.reduced_nnz, r.joint_nnz))
        .collect();
    c.finish(
        agree && reduced_constant && joint_grows && span >= 10.0,
        &format!(
            "max pose gap {worst_t:.2e} m / {worst_r:.2e} rad over {span:.1}x cell range; nnz [{}]",
            nnz.join("; ")
        ),
    );
}

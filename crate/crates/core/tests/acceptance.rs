//! Exit criteria. Runs every check, prints one line per criterion and fails
//! if any of them does.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::process::{Command, ExitCode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdcd::control::descent::{coordinate_descent, dcd_runs_required, JointObjective, MultiSensorCommand};
use fdcd::control::objective::{bernoulli_kld, objective, void_probability, DroppedTerm, ObjectiveParams};
use fdcd::exec::Execution;
use fdcd::fusion::fuse_existence;
use fdcd::geometry::{Point, State};
use fdcd::lmb::{BernoulliComponent, DensityRole, Label, LabeledParticle, LmbDensity};
use fdcd::network::{flood_broadcast, message_cost, FloodMessage, Topology};
use fdcd::sensor::SensorState;
use fdcd::sim::monte_carlo::{monte_carlo, MonteCarloSummary};
use fdcd::sim::ospa::{ospa, ospa2, Track};
use fdcd::sim::pipeline::Method;
use fdcd::sim::scenario::{build_scenario_1, build_scenario_2, ScenarioConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_count_formula() -> Outcome {
    let a = dcd_runs_required(12, 0.95).map_err(|e| e.to_string())?;
    let b = dcd_runs_required(16, 0.95).map_err(|e| e.to_string())?;
    check(a == 35 && b == 47, format!("12 optima -> {a} runs, 16 optima -> {b} runs"))
}

fn fusion_odds_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let rs: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
        let odds: f64 = rs.iter().map(|r| r / (1.0 - r)).sum();
        let expected = 1.0 - 1.0 / (1.0 + odds);
        worst = worst.max((fuse_existence(&rs) - expected).abs());
    }
    let singleton_exact = (0..10_000).all(|_| {
        let r: f64 = rng.random();
        fuse_existence(&[r]) == r
    });
    check(
        worst <= 1e-12 && singleton_exact,
        format!("max |error| {worst:.2e} over 1e4 vectors, singleton identity exact: {singleton_exact}"),
    )
}

fn two_point_kld(r1: f64, r2: f64) -> f64 {
    [(r1, r2), (1.0 - r1, 1.0 - r2)]
        .into_iter()
        .filter(|(p, _)| *p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum()
}

fn random_cloud(rng: &mut ChaCha8Rng, label: Label, r: f64, center: Point, spread: f64, count: usize) -> BernoulliComponent {
    let mut weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let particles = weights
        .into_iter()
        .map(|w| {
            let x = center.x + rng.random_range(-spread..spread);
            let y = center.y + rng.random_range(-spread..spread);
            LabeledParticle::new(State::new(x, y, 0.0, 0.0), w)
        })
        .collect();
    BernoulliComponent::new(label, r, particles)
}

fn kld_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let r1 = rng.random_range(1e-6..1.0 - 1e-6);
        let r2 = rng.random_range(1e-6..1.0 - 1e-6);
        worst = worst.max((bernoulli_kld(r1, r2) - two_point_kld(r1, r2)).abs());
    }
    let params = ObjectiveParams::default();
    let mut self_max: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(1..=6);
        let comps = (0..n)
            .map(|i| {
                let r = rng.random_range(0.01..0.99);
                random_cloud(&mut rng, Label::new(trial, i, 0), r, Point::new(0.0, 0.0), 50.0, 10)
            })
            .collect();
        let d = LmbDensity::new(comps, 1, DensityRole::Predicted);
        self_max = self_max.max(objective(&d, &d, &params).abs());
    }
    check(
        worst <= 1e-9 && self_max == 0.0,
        format!("max |closed form - enumeration| {worst:.2e} over 1e4 pairs, max |nu(pi, pi)| {self_max:.1e}"),
    )
}

/// Every agent scores every joint command from its own random table; some
/// commands are infeasible.
struct RandomGame {
    actions: Vec<usize>,
    tables: Vec<BTreeMap<Vec<usize>, Option<f64>>>,
}

impl RandomGame {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let agents = rng.random_range(1..=4);
        let actions: Vec<usize> = (0..agents).map(|_| rng.random_range(1..=3)).collect();
        let mut commands = vec![Vec::new()];
        for &a in &actions {
            commands = commands
                .into_iter()
                .flat_map(|c: Vec<usize>| {
                    (0..a).map(move |x| {
                        let mut c = c.clone();
                        c.push(x);
                        c
                    })
                })
                .collect();
        }
        let tables = (0..agents)
            .map(|_| {
                commands
                    .iter()
                    .map(|c| (c.clone(), (rng.random::<f64>() > 0.1).then(|| rng.random_range(-10.0..10.0))))
                    .collect()
            })
            .collect();
        Self { actions, tables }
    }

    fn joint_commands(&self) -> usize {
        self.actions.iter().product()
    }
}

impl JointObjective for RandomGame {
    fn agents(&self) -> usize {
        self.actions.len()
    }

    fn action_count(&self, agent: usize) -> usize {
        self.actions[agent]
    }

    fn evaluate(&self, agent: usize, command: &[usize]) -> Option<f64> {
        self.tables[agent][command]
    }
}

fn descent_terminates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut longest = 0;
    for _ in 0..1000 {
        let game = RandomGame::new(&mut rng);
        let initial = MultiSensorCommand(game.actions.iter().map(|&a| rng.random_range(0..a)).collect());
        match coordinate_descent(&game, initial) {
            Ok(outcome) if outcome.state.iteration <= game.joint_commands() + 1 => {
                longest = longest.max(outcome.state.iteration);
            }
            _ => failures += 1,
        }
    }
    check(
        failures == 0,
        format!("{} of 1000 instances cycled within the bound, longest descent {longest} iterations", 1000 - failures),
    )
}

/// Sums the probability of every existence pattern with no target inside.
fn void_by_enumeration(inside_mass: &[f64], existence: &[f64]) -> f64 {
    let n = existence.len();
    (0..1usize << n)
        .map(|mask| {
            (0..n)
                .map(|l| {
                    if mask >> l & 1 == 1 {
                        existence[l] * (1.0 - inside_mass[l])
                    } else {
                        1.0 - existence[l]
                    }
                })
                .product::<f64>()
        })
        .sum()
}

fn void_probability_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let sensor = SensorState::new(Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)), 0.0);
        let rho = rng.random_range(5.0..60.0);
        let n = rng.random_range(0..=7);
        let comps: Vec<BernoulliComponent> = (0..n)
            .map(|i| {
                let r = rng.random_range(0.0..1.0);
                let count = rng.random_range(1..=20);
                random_cloud(&mut rng, Label::new(trial, i, 0), r, Point::new(0.0, 0.0), 80.0, count)
            })
            .collect();
        let inside: Vec<f64> = comps
            .iter()
            .map(|c| {
                let mut m = 0.0;
                for p in &c.particles {
                    let (dx, dy) = (p.state.px - sensor.position.x, p.state.py - sensor.position.y);
                    if (dx * dx + dy * dy).sqrt() <= rho {
                        m += p.weight;
                    }
                }
                m
            })
            .collect();
        let existence: Vec<f64> = comps.iter().map(|c| c.existence).collect();
        let d = LmbDensity::new(comps, 1, DensityRole::Posterior);
        worst = worst.max((void_probability(&d, &sensor, rho) - void_by_enumeration(&inside, &existence)).abs());
    }

    let at_origin = SensorState::new(Point::new(0.0, 0.0), 0.0);
    let single = |x: f64| {
        let c = BernoulliComponent::new(
            Label::new(0, 0, 0),
            0.7,
            vec![
                LabeledParticle::new(State::new(x, 0.0, 0.0, 0.0), 0.5),
                LabeledParticle::new(State::new(x, 1.0, 0.0, 0.0), 0.5),
            ],
        );
        LmbDensity::new(vec![c], 1, DensityRole::Posterior)
    };
    let all_in = void_probability(&single(0.0), &at_origin, 10.0);
    let all_out = void_probability(&single(100.0), &at_origin, 10.0);
    check(
        worst <= 1e-12 && all_in == 1.0 - 0.7 && all_out == 1.0,
        format!("max |error| {worst:.2e} over 1e3 densities, all-in {all_in}, all-out {all_out}"),
    )
}

fn bfs(adjacency: &[Vec<usize>], origin: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    dist[origin] = Some(0);
    let mut queue = VecDeque::from([origin]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn flooding_matches_bfs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut messages = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let mut edges = Vec::new();
        // random spanning tree, then extra edges
        for v in 1..n {
            edges.push((rng.random_range(0..v), v));
        }
        for _ in 0..rng.random_range(0..=n) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b {
                edges.push((a, b));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let topology = Topology::from_edges(n, &edges).map_err(|e| e.to_string())?;
        for origin in 0..n {
            messages += 1;
            let msg = FloodMessage {
                origin,
                sequence: messages,
                payload: (),
            };
            match flood_broadcast(&topology, &msg, n) {
                Ok(report) if report.receipt_round == bfs(&adjacency, origin) => {}
                _ => mismatches += 1,
            }
        }
    }
    let cost_ok = (0..=50).all(|l| message_cost(l) == 40 * l + 21);
    check(
        mismatches == 0 && cost_ok,
        format!("{mismatches} of {messages} floods differ from BFS, message cost closed form holds: {cost_ok}"),
    )
}

fn summaries(config: &ScenarioConfig, runs: usize) -> Result<BTreeMap<&'static str, MonteCarloSummary>, String> {
    let mut out = BTreeMap::new();
    for method in Method::ALL {
        let s = monte_carlo(config, method, runs, config.monte_carlo.base_seed, 1, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        out.insert(method.as_str(), s);
    }
    Ok(out)
}

fn scenario_1_desk_scale() -> Outcome {
    let s = summaries(&build_scenario_1(), 5)?;
    let m = |k: &str| s[k].mean_ospa;
    let (fdcd, isc, dcd, fixed) = (m("fdcd"), m("isc"), m("dcd"), m("fixed"));
    check(
        fdcd < isc && isc < dcd && dcd < fixed && fixed > 40.0 && fdcd < 15.0,
        format!(
            "mean OSPA fdcd {fdcd:.2} / isc {isc:.2} / dcd(m=1) {dcd:.2} / fixed {fixed:.2} m; \
             need fdcd < isc < dcd < fixed, fixed > 40, fdcd < 15"
        ),
    )
}

fn scenario_2_desk_scale() -> Outcome {
    let s = summaries(&build_scenario_2().truncated(60), 3)?;
    let m = |k: &str| s[k].mean_ospa;
    let (fdcd, dcd, isc) = (m("fdcd"), m("dcd"), m("isc"));
    let card = s["fdcd"].cardinality_error_after(10);
    check(
        fdcd < dcd && dcd < isc && card <= 2.0,
        format!(
            "mean OSPA fdcd {fdcd:.2} / dcd(m=1) {dcd:.2} / isc {isc:.2} m, \
             fdcd cardinality error after step 10 {card:.2}; need fdcd < dcd < isc, error <= 2"
        ),
    )
}

fn dropped_label_sign() -> Outcome {
    let scenario_term = build_scenario_1().objective.dropped_term;
    let mut worst = f64::NEG_INFINITY;
    for i in 1..=99 {
        let r2 = i as f64 / 100.0;
        for term in [DroppedTerm::AsWritten, DroppedTerm::Exact] {
            worst = worst.max(term.net(r2, 100.0));
        }
        let lost = LmbDensity::new(
            vec![BernoulliComponent::new(
                Label::new(0, 0, 0),
                r2,
                vec![LabeledParticle::new(State::new(0.0, 0.0, 0.0, 0.0), 1.0)],
            )],
            1,
            DensityRole::Predicted,
        );
        let params = ObjectiveParams {
            lambda: 100.0,
            dropped_term: scenario_term,
            ..ObjectiveParams::default()
        };
        worst = worst.max(objective(&LmbDensity::empty(1, DensityRole::PseudoPosterior), &lost, &params));
    }
    check(worst <= 0.0, format!("largest dropped-label net contribution {worst:.3} on r2 = 0.01..0.99"))
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.random_range(0..=6);
    (0..n)
        .map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
        .collect()
}

fn ospa_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (c, p) = (100.0, 1.0);
    let mut asymmetry: f64 = 0.0;
    let mut triangle_excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let (x, y, z) = (random_points(&mut rng), random_points(&mut rng), random_points(&mut rng));
        asymmetry = asymmetry.max((ospa(&x, &y, c, p) - ospa(&y, &x, c, p)).abs());
        triangle_excess = triangle_excess.max(ospa(&x, &z, c, p) - ospa(&x, &y, c, p) - ospa(&y, &z, c, p));
    }

    // tracks that exist at every step, so one-step windows see plain point sets
    let mut window_gap: f64 = 0.0;
    for _ in 0..100 {
        let steps = 5u32;
        let make = |rng: &mut ChaCha8Rng| -> Vec<Track> {
            (0..rng.random_range(0..=5))
                .map(|_| {
                    (1..=steps)
                        .map(|k| (k, Point::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0))))
                        .collect()
                })
                .collect()
        };
        let truth = make(&mut rng);
        let estimate = make(&mut rng);
        for k in 1..=steps {
            let at = |t: &[Track]| t.iter().map(|tr| tr[&k]).collect::<Vec<_>>();
            let plain = ospa(&at(&truth), &at(&estimate), c, p);
            window_gap = window_gap.max((ospa2(&truth, &estimate, c, p, k, k) - plain).abs());
        }
    }
    check(
        asymmetry <= 1e-9 && triangle_excess <= 1e-9 && window_gap <= 1e-9,
        format!(
            "max asymmetry {asymmetry:.1e}, max triangle excess {triangle_excess:.1e} over 1e3 triples, \
             max |ospa2(w=1) - ospa| {window_gap:.1e}"
        ),
    )
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_simulate"))
            .args(["--scenario", "1", "--method", "all", "--runs", "2", "--seed", "5", "--dcd-runs", "1", "--steps", "12"])
            .arg("--out")
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&status.stderr).into_owned())
        }
    };
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run(&a)?;
    run(&b)?;
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        if x != y {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let csvs = names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")).count();
    check(
        differing.is_empty() && csvs > 0,
        format!("{} files compared ({csvs} CSV), differing: {differing:?}", names.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "restart count formula", run_count_formula),
        (2, "existence fusion odds oracle", fusion_odds_oracle),
        (3, "existence KLD oracle", kld_oracle),
        (4, "coordinate descent termination", descent_terminates),
        (5, "void probability oracle", void_probability_oracle),
        (6, "flooding rounds and message cost", flooding_matches_bfs),
        (7, "scenario 1 desk scale", scenario_1_desk_scale),
        (8, "scenario 2 desk scale", scenario_2_desk_scale),
        (9, "dropped-label sign", dropped_label_sign),
        (10, "OSPA metric properties", ospa_properties),
        (11, "CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let (verdict, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {verdict} {name}: {detail}");
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

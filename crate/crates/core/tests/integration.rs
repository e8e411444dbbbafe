use std::fs;
use std::path::Path;

use pcosync::broadcast::Reception;
use pcosync::channel::SPEED_OF_LIGHT;
use pcosync::clock::VirtualClock;
use pcosync::kernel::SimTime;
use pcosync::pco::Role;
use pcosync::rng::{RngStream, StreamId};
use pcosync::runner::{run, simulate};
use pcosync::scenario::{Protocol, Scenario};
use pcosync::sim::{run_broadcast, run_pco, Trajectory, World};
use pcosync::topology::{all_nearest_neighbors, density, place_uniform, MobilityParams, Position};

fn small(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed: 11,
        n_nodes: 40,
        duration_s: 2000.0,
        sample_interval_s: 100.0,
        ..Scenario::default()
    }
    .normalized()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_write_identical_files() {
    let mut s = small("det");
    s.mobility.enabled = true;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&s, a.path()).unwrap();
    run(&s, b.path()).unwrap();
    let (fa, fb) = (read_all(a.path()), read_all(b.path()));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
}

#[test]
fn different_seeds_differ() {
    let s = small("seeds");
    let t = Scenario {
        seed: 12,
        ..s.clone()
    };
    let (a, b) = (simulate(&s).unwrap(), simulate(&t).unwrap());
    assert_ne!(a.pco_leg().unwrap().samples, b.pco_leg().unwrap().samples);
}

#[test]
fn both_legs_see_the_same_nodes() {
    let mut s = small("fair");
    s.mobility.enabled = true;
    let out = simulate(&s).unwrap();
    let (p, b) = (out.pco_leg().unwrap(), out.broadcast_leg().unwrap());
    assert_eq!(p.final_positions, b.final_positions);
    assert_eq!(p.mobility_steps, b.mobility_steps);
    let drift = |c: &[VirtualClock]| c.iter().map(|c| c.drift_rate.to_bits()).collect::<Vec<_>>();
    assert_eq!(drift(&p.final_clocks), drift(&b.final_clocks));
    let world = World::from_scenario(&s);
    assert_eq!(drift(&p.final_clocks), drift(&world.clocks));
}

#[test]
fn master_and_slave_end_synchronized() {
    let s = Scenario::load(Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/two_node.toml"
    )))
    .unwrap();
    let out = simulate(&s).unwrap();
    let leg = out.pco_leg().unwrap();
    // Drift walks the slave out of the 40 ns tolerance within seconds, so
    // only the samples taken as each window closes are checked.
    let after_round: Vec<_> = leg.samples.iter().filter(|s| s.tts_ms.is_some()).collect();
    assert_eq!(after_round.len(), leg.rounds.len());
    for sample in after_round {
        assert_eq!(sample.pos, 0.0, "at {} s", sample.t_s);
    }
}

#[test]
fn broadcast_leaves_only_flight_time() {
    let s = Scenario {
        n_nodes: 50,
        duration_s: 10.0,
        drift_magnitude: 0.0,
        protocol: Protocol::Broadcast,
        ..small("bcast")
    };
    let world = World::from_scenario(&s);
    let (leg, rounds) = run_broadcast(&s, &world).unwrap();
    assert_eq!(rounds.len(), 1);
    let round = &rounds[0];
    let transmitters = round
        .receptions
        .iter()
        .filter(|r| **r == Reception::Transmitter)
        .count();
    assert_eq!(transmitters, 1);
    assert!(round.feasible);
    assert_eq!(round.decoded(), s.n_nodes - 1);
    let end = SimTime::from_secs_f64(s.duration_s);
    for (i, r) in round.receptions.iter().enumerate() {
        let err = leg.final_clocks[i].error(end);
        match r {
            Reception::Transmitter => assert!(err.abs() < 1e-12),
            Reception::Decoded { prop_delay } if world.roles[i] == Role::Slave => {
                assert!(
                    (err + prop_delay).abs() <= 1e-9,
                    "node {i}: {err} vs {prop_delay}"
                )
            }
            _ => assert!(err.abs() < 1e-12),
        }
    }
}

/// A slave 5 µs fast, listening to one drift-free master: after the window
/// its clock lags true time by exactly the master's flight time, because the
/// synchronous pulse it aligned to was emitted on the master's grid.
#[test]
fn corrected_slave_lags_by_flight_time() {
    let s = Scenario {
        n_nodes: 2,
        n_masters: 1,
        drift_magnitude: 0.0,
        duration_s: 10.0,
        protocol: Protocol::Pco,
        ..small("residual")
    };
    let d = 37.0;
    let world = World {
        positions: vec![Position::new(0.0, 0.0), Position::new(d, 0.0)],
        clocks: vec![VirtualClock::ideal(), VirtualClock::new(0.0, 5e-6)],
        roles: vec![Role::Master, Role::Slave],
    };
    let (leg, windows) = run_pco(&s, &world).unwrap();
    let w = windows[0][1];
    assert!(w.converged_after.is_some());
    assert!(w.correction.is_some());
    let err = leg.final_clocks[1].error(SimTime::from_secs_f64(s.duration_s));
    let flight = d / SPEED_OF_LIGHT;
    assert!(err.abs() <= s.pco.phase_tol * s.pco.t_d);
    assert!((err + flight).abs() < 2e-9, "{err} vs {}", -flight);
}

#[test]
fn uniform_placement_nearest_neighbour_spacing() {
    let mut means = Vec::new();
    for seed in 0..20 {
        let pts = place_uniform(612, 1000.0, &mut RngStream::new(seed, StreamId::Placement));
        let nn = all_nearest_neighbors(&pts).unwrap();
        means.push(nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    // Poisson field: 1 / (2·sqrt(density)).
    let expect = 0.5 / (612.0f64 / 1e6).sqrt();
    assert!((mean / expect - 1.0).abs() < 0.15, "{mean} vs {expect}");
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn mobility_thins_the_network() {
    let params = MobilityParams {
        enabled: true,
        ..MobilityParams::default()
    };
    for seed in 0..5 {
        let init = place_uniform(100, 1000.0, &mut RngStream::new(seed, StreamId::Placement));
        let mut traj = Trajectory::new(init, params.clone(), seed);
        let ts: Vec<f64> = (0..=10).map(|k| k as f64 * 500.0).collect();
        let ds: Vec<f64> = ts
            .iter()
            .map(|&t| density(traj.at(SimTime::from_secs_f64(t))).unwrap())
            .collect();
        assert!(slope(&ts, &ds) < 0.0, "seed {seed}: {ds:?}");
    }
}

use fdmimo::harness::*;
use std::time::Instant;

fn main() {
    for (nv, nh, model) in [
        (100usize, 40usize, ChannelModel::OneRing),
        (128, 32, ChannelModel::OneRing),
        (120, 30, ChannelModel::SinglePath),
    ] {
        let mut cfg = ScenarioConfig::default();
        cfg.array.n_v = nv;
        cfg.array.n_h = nh;
        cfg.channel.model = model;
        cfg.run.trials = 1;
        let t0 = Instant::now();
        let shared = prepare_scenario(&cfg).unwrap();
        let setup = t0.elapsed();
        let t1 = Instant::now();
        let _r = run_trial(&cfg, &shared, 0).unwrap();
        println!(
            "{}x{} {:?}: setup {:?}, trial {:?}",
            nv, nh, model, setup, t1.elapsed()
        );
    }
}

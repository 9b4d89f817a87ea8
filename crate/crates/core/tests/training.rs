use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikebudget::budget::BudgetConfig;
use spikebudget::continual::{
    evaluate, read_budget_log, run_config, write_run, ConfigId, Dataset, InputKind, InsertTiming, RunConfig, Sample,
    SampleData, TaskSchedule, Trainer,
};
use spikebudget::encoding::{synth_event_stream, EventRecord, FrameImage};
use spikebudget::network::{read_checkpoint, write_checkpoint};

/// Frames whose bright quadrant depends on the class, with pixel jitter.
fn frames(classes: usize, train: usize, test: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |n: usize| {
        (0..n * classes)
            .map(|i| {
                let label = i % classes;
                let px = (0..36)
                    .map(|p| {
                        let hot = p % classes == label;
                        let base: f32 = if hot { 0.8 } else { 0.1 };
                        (base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)
                    })
                    .collect();
                Sample::frame(FrameImage::new(px, 6, 6, label).unwrap())
            })
            .collect()
    };
    let train = mk(train);
    let test = mk(test);
    Dataset { kind: InputKind::Frames { height: 6, width: 6 }, num_classes: classes, train, test }
}

/// Background noise plus a burst of ON events in a class-specific column.
fn events(classes: usize, train: usize, test: usize, seed: u64) -> Dataset {
    const W: u16 = 4;
    const H: u16 = 4;
    const DUR: u32 = 50_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |n: usize| {
        (0..n * classes)
            .map(|i| {
                let label = i % classes;
                let mut ev = synth_event_stream(&mut rng, W, H, DUR, 200.0).unwrap();
                for _ in 0..40 {
                    ev.push(EventRecord {
                        t: rng.random_range(0..DUR),
                        x: label as u16 % W,
                        y: rng.random_range(0..H),
                        polarity: 1,
                    });
                }
                ev.sort_by_key(|e| e.t);
                Sample { data: SampleData::Events(ev), label }
            })
            .collect()
    };
    let train = mk(train);
    let test = mk(test);
    Dataset {
        kind: InputKind::Events { height: H, width: W, duration_us: u64::from(DUR) },
        num_classes: classes,
        train,
        test,
    }
}

fn small(id: ConfigId, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(id, seed);
    cfg.epochs_per_task = 2;
    cfg.batch_size = 8;
    cfg.timesteps = 6;
    cfg.hidden = 16;
    cfg.buffer_capacity = 24;
    cfg
}

#[test]
fn event_stream_run_completes() {
    let data = events(4, 24, 10, 1);
    let schedule: TaskSchedule = "2x2".parse().unwrap();
    let mut cfg = small(ConfigId::C4, 3);
    cfg.budget = BudgetConfig::EVENT;
    cfg.epochs_per_task = 8;
    let r = run_config(&cfg, &schedule, &data).unwrap();
    assert_eq!(r.accuracy_matrix.num_tasks(), 2);
    assert!(r.forgetting.is_some() && r.bwt.is_some());
    assert!(r.mean_spike_rate > 0.0 && r.mean_spike_rate < 1.0);
    assert!(r.acc > 0.5, "acc {}", r.acc);
}

#[test]
fn single_task_has_no_forgetting_metrics() {
    let data = frames(2, 16, 8, 2);
    let r = run_config(&small(ConfigId::C1, 0), &"0,1".parse().unwrap(), &data).unwrap();
    assert_eq!(r.accuracy_matrix.num_tasks(), 1);
    assert_eq!(r.forgetting, None);
    assert_eq!(r.bwt, None);
    assert_eq!(r.acc, r.accuracy_matrix.get(0, 0).unwrap());
}

#[test]
fn flags_reach_the_right_components() {
    let data = frames(4, 16, 8, 4);
    let schedule: TaskSchedule = "2x2".parse().unwrap();
    let run = |id| {
        let mut cfg = small(id, 9);
        cfg.budget.r_target = 0.01;
        run_config(&cfg, &schedule, &data).unwrap()
    };
    let (c0, c1, c2, c3, c4) =
        (run(ConfigId::C0), run(ConfigId::C1), run(ConfigId::C2), run(ConfigId::C3), run(ConfigId::C4));

    let lambdas =
        |r: &spikebudget::continual::RunResult| r.budget_log.iter().map(|e| e.lambda_rate).collect::<Vec<_>>();
    assert_eq!(lambdas(&c2), lambdas(&c1));
    assert!(lambdas(&c1).iter().all(|&l| l == 0.0));
    assert!(lambdas(&c0).iter().all(|&l| l == 0.0));
    assert!(c1.budget_log.iter().all(|e| e.penalty == 0.0));

    for r in [&c0, &c1, &c3] {
        assert_eq!(r.lif_raw_end.map(f32::to_bits), r.lif_raw_start.map(f32::to_bits), "{}", r.config_id);
    }
    assert_ne!(c2.lif_raw_end, c2.lif_raw_start);
    assert_ne!(c4.lif_raw_end, c4.lif_raw_start);
    assert!(lambdas(&c3).iter().any(|&l| l > 0.0));
    assert!(lambdas(&c4).iter().any(|&l| l > 0.0));
}

#[test]
fn mean_spike_rate_is_the_log_mean() {
    let data = frames(4, 16, 8, 5);
    let r = run_config(&small(ConfigId::C4, 1), &"2x2".parse().unwrap(), &data).unwrap();
    let mean = r.budget_log.iter().map(|e| e.r_batch).sum::<f64>() / r.budget_log.len() as f64;
    assert_eq!(r.mean_spike_rate, mean);
    assert_eq!(r.budget_log.len() as u64, r.optimizer_steps);
}

#[test]
fn identical_runs_write_identical_files() {
    let data = frames(4, 12, 6, 6);
    let schedule: TaskSchedule = "2x2".parse().unwrap();
    let cfg = small(ConfigId::C4, 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = write_run(a.path(), &run_config(&cfg, &schedule, &data).unwrap()).unwrap();
    let fb = write_run(b.path(), &run_config(&cfg, &schedule, &data).unwrap()).unwrap();
    for (x, y) in [(fa.json, fb.json), (fa.accuracy_csv, fb.accuracy_csv), (fa.budget_csv.clone(), fb.budget_csv)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let log = read_budget_log(std::fs::File::open(fa.budget_csv).unwrap()).unwrap();
    assert!(!log.is_empty());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = frames(6, 12, 6, 7);
    let schedule: TaskSchedule = "3x2".parse().unwrap();
    for (reencode, timing) in [(true, InsertTiming::AfterTask), (false, InsertTiming::FinalEpoch)] {
        let mut cfg = small(ConfigId::C4, 11);
        cfg.reencode = reencode;
        cfg.insert_timing = timing;
        let straight = run_config(&cfg, &schedule, &data).unwrap();

        let mut t = Trainer::new(cfg.clone(), schedule.clone(), &data).unwrap();
        t.run_next_task().unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&t.checkpoint().unwrap(), &mut bytes).unwrap();
        drop(t);

        let ckpt = read_checkpoint(bytes.as_slice()).unwrap();
        let mut t = Trainer::resume(cfg.clone(), schedule.clone(), &data, ckpt).unwrap();
        assert_eq!(t.tasks_done(), 1);
        while !t.is_finished() {
            t.run_next_task().unwrap();
        }
        let mut resumed = t.finish().unwrap();
        resumed.wall_time_s = straight.wall_time_s;
        assert_eq!(resumed, straight);
    }
}

#[test]
fn resume_rejects_a_different_config() {
    let data = frames(4, 8, 4, 8);
    let schedule: TaskSchedule = "2x2".parse().unwrap();
    let cfg = small(ConfigId::C1, 0);
    let mut t = Trainer::new(cfg.clone(), schedule.clone(), &data).unwrap();
    t.run_next_task().unwrap();
    let ckpt = t.checkpoint().unwrap();
    let other = RunConfig { seed: 1, ..cfg };
    assert!(Trainer::resume(other, schedule, &data, ckpt).is_err());
}

#[test]
fn pooled_accuracy_is_the_weighted_mean_of_class_accuracies() {
    let data = frames(4, 12, 7, 9);
    let schedule: TaskSchedule = "2x2".parse().unwrap();
    let mut t = Trainer::new(small(ConfigId::C1, 3), schedule, &data).unwrap();
    t.run_next_task().unwrap();
    t.run_next_task().unwrap();
    let net = t.net();
    let all: Vec<usize> = (0..data.test.len()).collect();
    // Per-sample passes draw the same encodings as the pooled pass.
    let seed_rng = || ChaCha8Rng::seed_from_u64(5);
    let (pooled, n) = evaluate(net, &data, &all, 6, &mut seed_rng()).unwrap();
    assert_eq!(n, all.len());
    let mut rng = seed_rng();
    let mut per_class = vec![0usize; 4];
    for &i in &all {
        let (c, _) = evaluate(net, &data, &[i], 6, &mut rng).unwrap();
        per_class[data.test[i].label] += c;
    }
    assert_eq!(per_class.iter().sum::<usize>(), pooled);
}

#[test]
fn untrained_net_is_at_chance_on_label_noise() {
    let mut data = frames(2, 4, 500, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for s in &mut data.test {
        s.label = rng.random_range(0..2);
    }
    let t = Trainer::new(small(ConfigId::C0, 4), "0,1".parse().unwrap(), &data).unwrap();
    let mut net = t.net().clone();
    net.activate(&[0, 1]).unwrap();
    let all: Vec<usize> = (0..data.test.len()).collect();
    let (c, n) = evaluate(&net, &data, &all, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let acc = c as f64 / n as f64;
    assert!((acc - 0.5).abs() <= 4.0 * (0.25 / n as f64).sqrt(), "{acc}");
}

use std::collections::BTreeSet;

use edtn_core::sim::{
    apply_loss, bundled, compute_metrics, read_csv, run, EventKind, Scenario, TraceRecord,
};
use edtn_core::NodeKind;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str) -> Scenario {
    Scenario::from_json(bundled::get(name).unwrap()).unwrap()
}

fn events<'a>(
    trace: &'a [TraceRecord],
    kind: EventKind,
) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    trace.iter().filter(move |r| r.event == kind)
}

/// Panics on any ordering or causality violation in a trace.
fn check_causality(trace: &[TraceRecord]) {
    let mut sent = BTreeSet::new();
    let mut server = BTreeSet::new();
    let mut acked = BTreeSet::new();
    let mut deleted = BTreeSet::new();
    let mut last = f64::NEG_INFINITY;
    for r in trace {
        assert!(r.time >= last, "clock went back at {r:?}");
        last = r.time;
        let id = r.bundle_id;
        match r.event {
            EventKind::BundleSent => {
                sent.insert(id.unwrap());
            }
            EventKind::ServerDelivered => {
                assert!(sent.contains(&id.unwrap()), "delivered before sent: {r:?}");
                server.insert(id.unwrap());
            }
            EventKind::AckDelivered => {
                assert!(server.contains(&id.unwrap()), "ack before server: {r:?}");
                acked.insert(id.unwrap());
            }
            EventKind::FanDelete => {
                assert!(acked.contains(&id.unwrap()), "delete without ack: {r:?}");
                assert!(deleted.insert(id.unwrap()), "deleted twice: {r:?}");
            }
            _ => {}
        }
    }
}

#[test]
fn single_bundle_chain_matches_phase_table() {
    let r = run(&scenario("paper-single-bundle"), 0).unwrap();
    assert_eq!(r.metrics.dm_chain_time_s, 193.0);
    assert_eq!(r.metrics.dm_chain_energy_j, 367.0);
    assert_eq!(r.metrics.bundles_delivered, 1);
    assert_eq!(r.metrics.bundles_deleted, 1);
    // 7 s over Wi-Fi, then the whole cycle
    assert_eq!(r.metrics.mean_latency_s, 200.0);
    assert!(r.fan_queue.is_empty());
}

#[test]
fn latency_scenario_transfer_times_follow_the_anchors() {
    let r = run(&scenario("paper-table2-latency"), 0).unwrap();
    let mut gaps: Vec<(u64, f64)> = Vec::new();
    for s in events(&r.trace, EventKind::BundleSent) {
        let id = s.bundle_id.unwrap();
        let recv = events(&r.trace, EventKind::BundleReceived)
            .find(|x| x.bundle_id == Some(id))
            .unwrap();
        gaps.push((id, recv.time - s.time));
    }
    let expected = [
        (1, 7.0),
        (2, 7.0),
        (3, 20.0),
        (4, 5.0),
        (5, 90.0),
        (6, 280.0),
    ];
    assert_eq!(gaps, expected);
    let techs: Vec<_> = events(&r.trace, EventKind::BundleSent)
        .map(|s| s.tech.unwrap().as_str())
        .collect();
    assert_eq!(
        techs,
        [
            "WiFi",
            "WiFi",
            "WiFi",
            "Bluetooth",
            "Bluetooth",
            "Bluetooth"
        ]
    );
    assert_eq!(r.metrics.bundles_deleted, 6);
}

#[test]
fn lossy_scenario_delivers_everything_at_seed_zero() {
    let r = run(&scenario("lossy-multi-contact"), 0).unwrap();
    assert_eq!(r.metrics.bundles_delivered, 10);
    assert_eq!(r.metrics.bundles_deleted, 10);
    assert!(r.metrics.messages_lost > 0);
    check_causality(&r.trace);
}

#[test]
fn bundled_runs_are_deterministic_and_conserve_energy() {
    for (name, _) in bundled::ALL {
        let s = scenario(name);
        let a = run(&s, 7).unwrap();
        let b = run(&s, 7).unwrap();
        assert_eq!(a.trace_csv(), b.trace_csv(), "{name}");
        assert!(
            a.dm.conservation_error <= 1e-9,
            "{name}: {}",
            a.dm.conservation_error
        );
        assert!(
            a.fan.conservation_error <= 1e-9,
            "{name}: {}",
            a.fan.conservation_error
        );
        check_causality(&a.trace);
    }
}

#[test]
fn empty_workload_runs_quietly() {
    let mut s = scenario("lossy-multi-contact");
    s.workload.clear();
    let r = run(&s, 0).unwrap();
    assert_eq!(r.metrics.bundles_offered, 0);
    assert_eq!(r.metrics.bundles_delivered, 0);
    assert_eq!(r.metrics.dm_energy_consumed_j, 0.0);
    assert!(events(&r.trace, EventKind::BundleSent).next().is_none());
}

#[test]
fn total_loss_delivers_nothing_and_keeps_the_queue() {
    let mut s = scenario("lossy-multi-contact");
    s.loss = 1.0;
    let r = run(&s, 0).unwrap();
    assert_eq!(r.metrics.bundles_delivered, 0);
    assert_eq!(r.metrics.bundles_deleted, 0);
    assert_eq!(r.fan_queue, (1..=10).collect::<Vec<_>>());
}

#[test]
fn failed_flush_is_paid_for_but_not_delivered() {
    let mut s = scenario("paper-single-bundle");
    s.gprs_failure = 1.0;
    let r = run(&s, 0).unwrap();
    assert_eq!(r.metrics.bundles_delivered, 0);
    assert_eq!(r.metrics.dm_chain_energy_j, 367.0);
    assert_eq!(events(&r.trace, EventKind::FlushFailed).count(), 1);
    assert_eq!(r.fan_queue, vec![1]);
}

#[test]
fn gprs_blackout_postpones_the_flush() {
    let base = run(&scenario("paper-single-bundle"), 0).unwrap();
    let mut s = scenario("paper-single-bundle");
    // flush would start at 1575
    s.gprs_blackouts = serde_json::from_str(r#"[{"start_s": 1500, "end_s": 1600}]"#).unwrap();
    let r = run(&s, 0).unwrap();
    let t = |r: &edtn_core::sim::RunReport| {
        events(&r.trace, EventKind::ServerDelivered)
            .next()
            .unwrap()
            .time
    };
    assert_eq!(t(&base), 1606.0);
    assert_eq!(t(&r), 1631.0);
}

#[test]
fn horizon_stops_the_clock() {
    let mut s = scenario("paper-single-bundle");
    s.horizon_s = Some(1500.0);
    let r = run(&s, 0).unwrap();
    assert!(r.trace.iter().all(|x| x.time <= 1500.0));
    assert_eq!(r.metrics.bundles_delivered, 0);
}

#[test]
fn contact_too_short_for_any_transfer_sends_nothing() {
    let mut s = scenario("paper-single-bundle");
    // negotiation ends at +6 s; Wi-Fi needs 7 s more
    s.contacts[0].max_duration_s = 13.0;
    let r = run(&s, 0).unwrap();
    assert!(events(&r.trace, EventKind::BundleSent).next().is_none());
    assert_eq!(r.metrics.rounds, 1);
    s.contacts[0].max_duration_s = 13.5;
    let r = run(&s, 0).unwrap();
    assert_eq!(events(&r.trace, EventKind::BundleSent).count(), 1);
}

#[test]
fn empty_bank_never_negotiates_a_transfer() {
    let mut s = scenario("paper-single-bundle");
    s.rides.clear();
    let r = run(&s, 0).unwrap();
    let neg: Vec<_> = events(&r.trace, EventKind::NegotiationDone).collect();
    assert_eq!(neg.len(), 1);
    assert_eq!(neg[0].tech, None);
    assert_eq!(r.metrics.bundles_delivered, 0);
}

#[test]
fn invalid_scenario_is_rejected_before_running() {
    let mut s = scenario("paper-single-bundle");
    s.capacitor.capacitance_f = -1.0;
    let err = run(&s, 0).unwrap_err().to_string();
    assert!(err.contains("capacitor.capacitance_f"), "{err}");
}

#[test]
fn loss_draw_edges_and_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!((0..1000).all(|_| !apply_loss(&mut rng, 0.0)));
    assert!((0..1000).all(|_| apply_loss(&mut rng, 1.0)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lost = (0..10_000).filter(|_| apply_loss(&mut rng, 0.5)).count();
    let rate = lost as f64 / 10_000.0;
    assert!((rate - 0.5).abs() <= 0.02, "{rate}");
}

#[test]
fn loss_draw_advances_the_stream_once() {
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut b = ChaCha8Rng::seed_from_u64(9);
    apply_loss(&mut a, 0.0);
    apply_loss(&mut a, 1.0);
    let _: f64 = rand::Rng::random(&mut b);
    let _: f64 = rand::Rng::random(&mut b);
    assert_eq!(
        rand::Rng::random::<u64>(&mut a),
        rand::Rng::random::<u64>(&mut b)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lossy_runs_keep_invariants(seed in any::<u64>(), loss in 0.0..0.9f64, fail in 0.0..0.5f64) {
        let mut s = scenario("lossy-multi-contact");
        s.loss = loss;
        s.gprs_failure = fail;
        let r = run(&s, seed).unwrap();
        check_causality(&r.trace);
        prop_assert!(r.dm.conservation_error <= 1e-9);
        prop_assert!(r.fan.conservation_error <= 1e-9);
        // the bank never drops under cutoff
        prop_assert!(r.trace.iter().filter(|x| x.node == NodeKind::Dm).all(|x| x.cap_voltage.unwrap() >= 2.0 - 1e-12));
        // every bundle is either deleted at the FAN or still held there
        prop_assert_eq!(r.metrics.bundles_deleted as usize + r.fan_queue.len(), 10);

        let csv = r.trace_csv();
        let parsed = read_csv(csv.as_bytes()).unwrap();
        prop_assert_eq!(&parsed, &r.trace);
        prop_assert_eq!(compute_metrics(&parsed).unwrap(), r.metrics.clone());
    }
}

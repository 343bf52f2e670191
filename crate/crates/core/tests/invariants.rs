use gsnn_core::kg::Triple;
use gsnn_core::params::{NeuronParams, StdpParams};
use gsnn_core::protocol::{group_mean, random_graph};
use gsnn_core::snapshot::{from_bytes, to_bytes};
use gsnn_core::{
    encode_graph, encode_triple, mask_split, query, stdp_delta, step_network, NetworkState, Network, Params,
    PlasticityMode, Polarity, SynapseTable,
};
use proptest::prelude::*;

fn small_params() -> Params {
    let mut p = Params::default();
    p.engram.neurons = 400;
    p.engram.lambda = 0.05;
    p
}

fn encoded(seed: u64, triples: &[Triple]) -> Network {
    let mut net = Network::new(small_params()).unwrap();
    net.bind_symbols(triples, seed).unwrap();
    encode_graph(&mut net, triples, seed, |_, _| {}).unwrap();
    net
}

fn triples_strategy() -> impl Strategy<Value = Vec<Triple>> {
    (1usize..6, any::<u64>()).prop_map(|(n, seed)| random_graph(6, 2, n, seed).unwrap())
}

proptest! {
    #[test]
    fn refractory_and_reset_hold_under_any_drive(
        drive in proptest::collection::vec(proptest::collection::vec((0u32..8, 0.0f64..400.0), 0..8), 1..80)
    ) {
        let p = NeuronParams::default();
        let mut state = NetworkState::new(8, &p);
        let table = SynapseTable::new(8);
        let tau = (p.tau_ref_ms / p.dt_ms).round() as u64;
        let mut last: Vec<Option<u64>> = vec![None; 8];
        for (k, ext) in drive.iter().enumerate() {
            step_network(&mut state, &table, &p, ext).unwrap();
            for &f in &state.fired {
                if let Some(prev) = last[f as usize] {
                    prop_assert!(k as u64 - prev > tau);
                }
                last[f as usize] = Some(k as u64);
                prop_assert_eq!(state.v[f as usize], p.v_reset_mv);
            }
            prop_assert!(state.v.iter().all(|&v| v < p.v_threshold_mv));
        }
    }

    #[test]
    fn stdp_depression_mirrors_potentiation(x in 0.01f64..19.99) {
        let s = StdpParams::default();
        let ratio = stdp_delta(-x, &s) / -stdp_delta(x, &s);
        prop_assert!((ratio - s.a_plus / s.a_minus).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_partition(n in 1usize..60, frac in 0.0f64..0.99, seed in any::<u64>()) {
        let triples = random_graph(20, 3, n, seed).unwrap();
        let s = mask_split(&triples, frac, seed).unwrap();
        prop_assert_eq!(s.masked.len(), (frac * n as f64).round() as usize);
        let mut joined = s.train.clone();
        joined.extend(s.masked.iter().cloned());
        joined.sort();
        let mut all = triples.clone();
        all.sort();
        prop_assert_eq!(joined, all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn weights_respect_sign_and_bound(triples in triples_strategy(), seed in any::<u64>()) {
        let net = encoded(seed, &triples);
        let w_max = net.params.stdp.w_max;
        let pol = net.registry.polarity();
        for s in net.synapses.synapses() {
            match pol[s.pre as usize] {
                Polarity::Excitatory => prop_assert!((0.0..=w_max).contains(&s.weight)),
                Polarity::Inhibitory => prop_assert!((-w_max..=0.0).contains(&s.weight)),
            }
        }
    }

    #[test]
    fn encoding_is_directional(seed in any::<u64>()) {
        let mut net = Network::new(small_params()).unwrap();
        net.bind_symbols(&[Triple::new("A", "R", "B")], seed).unwrap();
        encode_triple(&mut net, "A", "R", "B", seed).unwrap();
        let id = |l: &str| net.registry.id_of(l).unwrap();
        let g = |a: &str, b: &str| group_mean(&net, id(a), id(b));
        let backward = g("B", "A").max(g("R", "A"));
        prop_assert!(g("A", "R") > backward);
        prop_assert!(g("R", "B") > backward);
    }

    #[test]
    fn same_seed_same_bytes(triples in triples_strategy(), seed in any::<u64>()) {
        prop_assert_eq!(to_bytes(&encoded(seed, &triples)), to_bytes(&encoded(seed, &triples)));
    }

    #[test]
    fn snapshot_round_trip_and_continuation(triples in triples_strategy(), seed in any::<u64>()) {
        let mut a = encoded(seed, &triples);
        let bytes = to_bytes(&a);
        let mut b = from_bytes(&bytes).unwrap();
        prop_assert_eq!(to_bytes(&b), bytes);
        let head = triples[0].head.clone();
        let t = a.time_ms();
        let plan = a.stimulate(&head, (t, t + 30.0), seed).unwrap();
        let ra = a.run_window(std::slice::from_ref(&plan), 40.0, PlasticityMode::Stdp).unwrap();
        let rb = b.run_window(&[plan], 40.0, PlasticityMode::Stdp).unwrap();
        prop_assert_eq!(ra, rb);
        prop_assert_eq!(to_bytes(&a), to_bytes(&b));
    }

    #[test]
    fn query_leaves_the_network_untouched(triples in triples_strategy(), seed in any::<u64>()) {
        let mut net = encoded(seed, &triples);
        let before = to_bytes(&net);
        let t = &triples[0];
        query(&mut net, &t.head, &t.relation, 0.5, seed).unwrap();
        prop_assert_eq!(to_bytes(&net), before);
    }
}

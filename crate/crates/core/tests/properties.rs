mod props;

macro_rules! suites {
    ($($name:ident => $index:expr),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                let (label, suite) = props::SUITES[$index];
                if let Err(e) = suite() {
                    panic!("{label}: {e}");
                }
            }
        )*
    };
}

suites! {
    environment_rows_are_stochastic => 0,
    random_rows_are_stochastic => 1,
    pruning_is_idempotent => 2,
    bellman_residual_bounds_the_greedy_loss => 3,
    occupancy_sums_to_big_m => 4,
    monte_carlo_agrees_with_exact => 5,
    routing_partitions_states => 6,
    deepening_keeps_the_policy => 7,
    tree_json_round_trips => 8,
    mdp_file_round_trips => 9,
    mps_round_trips => 10,
}

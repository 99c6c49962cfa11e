//! Config builders shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use sdflow::driver::{parse_config_str, RunConfig};

pub const CASE1: &str = include_str!("../../../../configs/case1_mini.json");
pub const CASE2: &str = include_str!("../../../../configs/case2_mini.json");

pub fn case1() -> RunConfig {
    parse_config_str(CASE1).unwrap()
}

pub fn case2() -> RunConfig {
    parse_config_str(CASE2).unwrap()
}

/// Darcy flow on `(0, 2) x (0, 1)` as one block or as two matching blocks
/// coupled by a piecewise-constant mortar on the fine edges.
pub fn strip(split: bool, n: usize, m: usize) -> RunConfig {
    let blocks = if split {
        format!(
            r#"{{"rect": [0, 1, 0, 1], "physics": "darcy", "region": 0, "mesh": [{n}, {n}]}},
               {{"rect": [1, 2, 0, 1], "physics": "darcy", "region": 0, "mesh": [{n}, {n}]}}"#
        )
    } else {
        format!(r#"{{"rect": [0, 2, 0, 1], "physics": "darcy", "region": 0, "mesh": [{}, {n}]}}"#, 2 * n)
    };
    parse_config_str(&format!(
        r#"{{
        "blocks": [{blocks}],
        "mortar": {{"degree": "p0", "elements": {{"dd": {n}, "sd": 1, "ss": 1}}, "coarse_factor": 1.0}},
        "kl_regions": [{{"variance": 0.5, "eta": [0.4, 0.4], "n_term": 3}}],
        "mean_log_perm": {{"type": "sinusoid", "offset": 0.0, "amplitude": 1.0, "k": [1.0, 1.5]}},
        "collocation": {{"kind": "tensor", "m": {m}}},
        "boundary": {{"darcy": {{
            "left": {{"type": "pressure", "value": 1.0}},
            "right": {{"type": "pressure", "value": 0.0}}
        }}}},
        "sources": {{"darcy_source": 0.5, "darcy_force": [0.0, -0.3]}},
        "solver": {{"tol": 1e-13}}
    }}"#
    ))
    .unwrap()
}

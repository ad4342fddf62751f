use proptest::prelude::*;

use super::*;
use crate::model::{build_model, BlockKind, LayerKind, LayerSpec, ModelConfig, ModelGraph};

fn model(name: &str) -> ModelGraph {
    let cfg = ModelConfig::from_file(&crate::model::tests::config_path(name)).unwrap();
    build_model(&cfg, 0).unwrap()
}

pub(crate) fn spec(kind: LayerKind, cin: usize, cout: usize, k: usize, s: usize, hw: (usize, usize)) -> LayerSpec {
    let groups = if kind == LayerKind::DWConv { cin } else { 1 };
    let out = ((hw.0 + 2 * (k / 2) - k) / s + 1, (hw.1 + 2 * (k / 2) - k) / s + 1);
    LayerSpec {
        name: "probe".into(),
        kind,
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride: s,
        groups,
        spatial_in: hw,
        spatial_out: out,
        has_bn: false,
        has_act: false,
        attn: None,
    }
}

/// Direct nested-loop convolution of the oracle operands.
fn direct(spec: &LayerSpec, x: &[i64], w: &[i64]) -> Vec<i64> {
    let (h, wd) = spec.spatial_in;
    let (ho, wo) = spec.spatial_out;
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, (spec.kernel / 2) as isize);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = vec![0; spec.out_channels * ho * wo];
    for oc in 0..spec.out_channels {
        for oy in 0..ho as isize {
            for ox in 0..wo as isize {
                let mut acc = 0;
                for ci in 0..cin_g {
                    let c = oc / cout_g * cin_g + ci;
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = (oy * s + ky - p, ox * s + kx - p);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                let xv = x[(c * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((oc * cin_g + ci) * k as usize + ky as usize) * k as usize + kx as usize];
                            }
                        }
                    }
                }
                out[(oc * ho + oy as usize) * wo + ox as usize] = acc;
            }
        }
    }
    out
}

#[test]
fn closed_form_examples() {
    let cfg = EngineConfig::default();
    assert_eq!(cycles_mat(&spec(LayerKind::PWConv, 8, 8, 1, 1, (1, 1)), &cfg).unwrap(), 4);
    assert_eq!(cycles_mat(&spec(LayerKind::PWConv, 64, 64, 1, 1, (14, 14)), &cfg).unwrap(), 12547);
    assert_eq!(cycles_rmac_dw(&spec(LayerKind::DWConv, 8, 8, 3, 1, (8, 8)), &cfg).unwrap(), 72);
    assert_eq!(cycles_rmac_dw(&spec(LayerKind::DWConv, 8, 8, 5, 1, (8, 8)), &cfg).unwrap(), 200);
    // stride 2 adds two stall cycles per row group
    assert_eq!(cycles_rmac_dw(&spec(LayerKind::DWConv, 8, 8, 3, 2, (16, 16)), &cfg).unwrap(), 8 * 11);
}

#[test]
fn routing_gates() {
    let cfg = EngineConfig::default();
    let dw = spec(LayerKind::DWConv, 8, 8, 3, 1, (8, 8));
    assert!(matches!(cycles_mat(&dw, &cfg), Err(crate::Error::Unroutable { .. })));
    assert!(cycles_rmac_dense(&dw, &cfg).is_err());
    assert!(cycles_rmac_dw(&spec(LayerKind::PWConv, 8, 8, 1, 1, (8, 8)), &cfg).is_err());
    assert!(cycles_rmac_dw(&spec(LayerKind::DWConv, 8, 8, 1, 1, (8, 8)), &cfg).is_err());
}

#[test]
fn symmetric_engines_agree() {
    let cfg = EngineConfig::default();
    for s in [spec(LayerKind::PWConv, 24, 40, 1, 1, (7, 9)), spec(LayerKind::GenericConv, 3, 16, 3, 2, (16, 16))] {
        assert_eq!(cycles_mat(&s, &cfg).unwrap(), cycles_rmac_dense(&s, &cfg).unwrap());
    }
}

#[test]
fn joint_rate_is_the_sum_of_engine_rates() {
    let cfg = EngineConfig { l: 1, ..EngineConfig::default() };
    let s = spec(LayerKind::PWConv, 64, 64, 1, 1, (16, 16));
    let w = DenseWork::of(&s, &cfg).unwrap();
    let alone = w.mat_only(&cfg);
    assert_eq!(w.joint(&cfg) * 2, alone);
    let wide = EngineConfig { n: 16, l: 1, ..EngineConfig::default() };
    let w = DenseWork::of(&s, &wide).unwrap();
    // MAT 8 + R-MAC 16 multipliers per lane: three parts, one on MAT, two on R-MAC
    let rate = 1.0 / w.mat as f64 + 1.0 / w.rmac as f64;
    assert!((w.joint(&wide) as f64 - w.units as f64 / rate).abs() <= w.mat.max(w.rmac) as f64);
}

#[test]
fn event_oracles_fixed_cases() {
    let cfg = EngineConfig::default();
    for s in [
        spec(LayerKind::DWConv, 12, 12, 3, 1, (9, 11)),
        spec(LayerKind::DWConv, 16, 16, 5, 2, (13, 10)),
        spec(LayerKind::DWConv, 5, 5, 3, 2, (7, 7)),
    ] {
        let (x, w) = event_operands(&s, 3);
        let e = event_rmac_dw(&s, &cfg, &x, &w).unwrap();
        assert_eq!(e.cycles, cycles_rmac_dw(&s, &cfg).unwrap());
        assert_eq!(e.output, direct(&s, &x, &w));
        assert_eq!(e.macs, (s.out_channels * s.pixels_out() * 9usize.max(s.kernel * s.kernel)) as u64);
    }
    let s = spec(LayerKind::GenericConv, 3, 10, 3, 2, (9, 9));
    let (x, w) = event_operands(&s, 4);
    let e = event_mat(&s, &cfg, &x, &w).unwrap();
    assert_eq!(e.cycles, cycles_mat(&s, &cfg).unwrap());
    assert_eq!(e.output, direct(&s, &x, &w));
    let e = event_rmac_dense(&s, &cfg, &x, &w).unwrap();
    assert_eq!(e.cycles, cycles_rmac_dense(&s, &cfg).unwrap());
}

fn arb_layer() -> impl Strategy<Value = (LayerSpec, EngineConfig)> {
    (0usize..4, 1usize..20, 1usize..20, prop::bool::ANY, prop::bool::ANY, 2usize..10, 2usize..10, 1usize..5, 1usize..5)
        .prop_map(|(kind, cin, cout, k5, s2, h, w, n, m)| {
            let k = if k5 { 5 } else { 3 };
            let s = if s2 { 2 } else { 1 };
            let cfg = EngineConfig { n: n * 2, m: m * 2, t: m * 3, s: n + 1, l: 1, ..EngineConfig::default() };
            let sp = match kind {
                0 => spec(LayerKind::DWConv, cin, cin, k, s, (h, w)),
                1 => spec(LayerKind::PWConv, cin, cout, 1, 1, (h, w)),
                2 => spec(LayerKind::GenericConv, cin, cout, k, s, (h, w)),
                _ => spec(LayerKind::MatMul, cin, cout, 1, 1, (h * w, 1)),
            };
            (sp, cfg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn closed_forms_match_event_models((sp, cfg) in arb_layer(), seed in 0u64..1000) {
        let (x, w) = event_operands(&sp, seed);
        let reference = direct(&sp, &x, &w);
        if sp.kind == LayerKind::DWConv {
            let e = event_rmac_dw(&sp, &cfg, &x, &w).unwrap();
            prop_assert_eq!(e.cycles, cycles_rmac_dw(&sp, &cfg).unwrap());
            prop_assert_eq!(e.output, reference);
        } else {
            let e = event_mat(&sp, &cfg, &x, &w).unwrap();
            prop_assert_eq!(e.cycles, cycles_mat(&sp, &cfg).unwrap());
            prop_assert_eq!(&e.output, &reference);
            let e = event_rmac_dense(&sp, &cfg, &x, &w).unwrap();
            prop_assert_eq!(e.cycles, cycles_rmac_dense(&sp, &cfg).unwrap());
            prop_assert_eq!(e.output, reference);
        }
    }
}

#[test]
fn peak_and_resources() {
    let cfg = EngineConfig::default();
    assert_eq!(cfg.total_multipliers(), 2048);
    assert!((cfg.peak_gops() - 819.2).abs() < 1e-9);
    assert_eq!(cfg.dsp_count(), 1024);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(EngineConfig::from_json(&text).unwrap(), cfg);
    assert!(EngineConfig::from_json(r#"{"N":0,"M":8,"T":8,"S":8,"L":16,"clock_mhz":200,"dsp_pack":2}"#).is_err());
    let mut c = cfg;
    c.set("dram_bytes_per_cycle", "64").unwrap();
    assert_eq!(c.dram_bytes_per_cycle, Some(64.0));
    assert!(c.set("X", "1").is_err());
}

#[test]
fn validator_flags_broken_timelines() {
    let mut tl = Timeline::default();
    let a = tl.place(Engine::Rmac, 0, "a", 1, 10, vec![], 0);
    tl.place(Engine::Mat, 0, "b", 1, 5, vec![Dep::Finish(a)], 0);
    assert!(tl.validate().is_ok());
    tl.ops[1].start = 3;
    tl.ops[1].finish = 8;
    assert!(tl.validate().is_err());
    let mut tl2 = Timeline::default();
    tl2.place(Engine::Mat, 0, "x", 1, 4, vec![], 0);
    tl2.place(Engine::Mat, 0, "y", 1, 4, vec![], 0);
    tl2.ops[1].start = 2;
    assert!(!tl2.violations().is_empty());
}

fn mbconvs(g: &ModelGraph) -> Vec<&crate::model::Block> {
    g.blocks.iter().filter(|b| b.kind == BlockKind::MBConv).collect()
}

#[test]
fn inter_layer_pipeline_on_toy() {
    let g = model("toy-mbconv");
    let cfg = EngineConfig::default();
    let b = mbconvs(&g)[0];
    let seg = schedule_inter_layer(&g, b, &cfg).unwrap();
    seg.timeline.validate().unwrap();
    let pw1 = DenseWork::of(&g.layers[b.layers[0]].spec, &cfg).unwrap().joint(&cfg);
    let dw = DwWork::of(&g.layers[b.layers[1]].spec, &cfg).unwrap();
    let pw2 = DenseWork::of(&g.layers[b.layers[2]].spec, &cfg).unwrap().joint(&cfg);
    assert!(seg.makespan() <= pw1 + dw.whole(&cfg).max(dw.row(&cfg)) + pw2);
    assert!(seg.makespan() < seg.serial);
    // no PW2 tile starts before its depthwise row
    let dnode = g.node_of_layer(b.layers[1]).unwrap();
    for op in seg.timeline.ops.iter().filter(|o| o.node == dnode + 1) {
        for d in &op.deps {
            if let Dep::Finish(i) = d {
                assert!(op.start >= seg.timeline.ops[*i].finish);
            }
        }
    }
    let zero = schedule_chain(&g, Some(b.layers[0]), b.layers[1], b.layers[2], &cfg, Some(0)).unwrap();
    assert_eq!(zero.makespan(), pw1 + pw2);
}

#[test]
fn shipped_blocks_gain_from_pipelining() {
    let cfg = EngineConfig::default();
    for name in ["effvit-b1-r224", "effvit-b1-r288", "effvit-b2-r224", "toy-mbconv", "toy-msa"] {
        let g = model(name);
        for b in &g.blocks {
            let seg = match b.kind {
                BlockKind::MBConv => schedule_inter_layer(&g, b, &cfg).unwrap(),
                BlockKind::MSA => schedule_intra_layer(&g, b, &cfg).unwrap(),
                _ => continue,
            };
            assert!(seg.timeline.violations().is_empty(), "{name} {}", b.name);
            assert!(seg.makespan() < seg.serial, "{name} {}: {} vs {}", b.name, seg.makespan(), seg.serial);
        }
    }
}

#[test]
fn single_head_attention_has_no_overlap() {
    let cfg = EngineConfig::default();
    let job = AttnJob { tokens: 49, dim: 16 };
    let seg = schedule_attention(&[job], 0, &cfg, 0.0);
    let c = StepCosts::of(job, &cfg);
    assert_eq!(seg.makespan(), c.kv + c.divisor.0 + c.dividend.0 + cfg.shift_drain);
    let four = schedule_attention(&[job; 4], 0, &cfg, 0.0);
    assert!(four.makespan() < four.serial);
    four.timeline.validate().unwrap();
    // k_sum is ready exactly when the last K column has streamed through step i
    for (i, op) in four.timeline.ops.iter().enumerate().filter(|(_, o)| o.engine == Engine::AdderTree) {
        let Dep::Stream(src) = op.deps[0] else { panic!("adder tree must stream") };
        assert_eq!(op.finish, four.timeline.ops[src].finish, "tile {i}");
        assert_eq!(op.start, four.timeline.ops[src].start);
    }
}

#[test]
fn report_invariants() {
    let g = model("effvit-b1-r224");
    let cfg = EngineConfig::default();
    let r = simulate(&g, &cfg).unwrap();
    assert_eq!(r.totals.violations, 0);
    assert!(r.totals.gops <= r.totals.peak_gops);
    assert!(r.totals.padding_waste_macs >= 0);
    assert!(r.totals.cycles < r.totals.serial_cycles);
    for e in &r.engines {
        assert!(e.busy_cycles <= r.totals.cycles);
        assert!((0.0..=1.0).contains(&e.utilization));
    }
    for l in &r.per_layer {
        assert!((0.0..=1.0).contains(&l.utilization), "{}", l.name);
    }
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["totals"]["fps"].as_f64().unwrap() > 0.0);
    assert!(json["per_layer"].as_array().unwrap().len() > 10);
}

#[test]
fn monotone_in_cores_and_clock() {
    for name in ["effvit-b1-r224", "toy-msa", "toy-mbconv"] {
        let g = model(name);
        let mut prev = u64::MAX;
        for l in [1, 2, 4, 8, 16, 32, 64] {
            let c = simulate(&g, &EngineConfig { l, ..EngineConfig::default() }).unwrap().totals.cycles;
            assert!(c <= prev, "{name}: L={l} gives {c} > {prev}");
            prev = c;
        }
        let fast = simulate(&g, &EngineConfig::default()).unwrap().totals.latency_ms;
        let slow = simulate(&g, &EngineConfig { clock_mhz: 100.0, ..EngineConfig::default() }).unwrap().totals.latency_ms;
        assert!((slow - 2.0 * fast).abs() < 1e-12 * slow);
    }
}

#[test]
fn bandwidth_ceiling_slows_down() {
    let g = model("effvit-b1-r224");
    let free = simulate(&g, &EngineConfig::default()).unwrap().totals.cycles;
    let capped = simulate(&g, &EngineConfig { dram_bytes_per_cycle: Some(4.0), ..EngineConfig::default() }).unwrap();
    assert!(capped.totals.cycles > free);
    assert_eq!(capped.totals.violations, 0);
}

#[test]
fn standalone_activation_is_unroutable() {
    let cfg = ModelConfig::from_json(
        r#"{"input":{"resolution":16},"stages":[{"blocks":[{"type":"stem","channels":8},{"type":"layer","kind":"relu","name":"custom.act"}]}]}"#,
    )
    .unwrap();
    let g = build_model(&cfg, 0).unwrap();
    match simulate(&g, &EngineConfig::default()) {
        Err(crate::Error::Unroutable { layer, .. }) => assert_eq!(layer, "custom.act"),
        other => panic!("expected unroutable, got {other:?}"),
    }
}

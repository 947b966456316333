use graspforge::pipeline::{run_pipeline, PipelineConfig};
use graspforge_ffi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gf_last_error_message()) }.to_string_lossy().into_owned()
}

/// A deliberately tiny bottle-only run, just enough to produce every artifact.
fn tiny_run(dir: &Path) {
    let sets: Vec<String> = [
        "diffusion.iterations=60",
        "diffusion.val_interval=60",
        "diffusion.val_episodes=2",
        "eval.episodes=2",
        "ablation.trials=4",
        "record.episodes_per_object=6",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut cfg = PipelineConfig::smoke().with_overrides(&sets).unwrap();
    cfg.out_dir = dir.to_path_buf();
    run_pipeline(&cfg, &|_| {}).unwrap();
}

#[test]
fn handles_round_trip_through_the_c_api() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_run(tmp.path());
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let bottle = CString::new("bottle").unwrap();
    let camera = CString::new("camera").unwrap();
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(gf_run_open(dir.as_ptr(), &mut run), GfStatus::Ok);
        assert!(!run.is_null());

        let mut policy = ptr::null_mut();
        assert_eq!(gf_policy_load(run, camera.as_ptr(), &mut policy), GfStatus::InvalidArgument);
        assert!(last_error().contains("camera"));
        assert_eq!(gf_policy_load(run, bottle.as_ptr(), &mut policy), GfStatus::Ok);
        assert_eq!(last_error(), "");

        let h = gf_policy_history_len(policy);
        let b = gf_policy_block_len(policy);
        assert!(h > 0 && b > 0 && b % 6 == 0);
        let history = vec![0.1; h];
        let mut a = vec![f64::NAN; b];
        let mut a2 = vec![f64::NAN; b];
        assert_eq!(gf_policy_sample(policy, history.as_ptr(), h, 7, a.as_mut_ptr(), b), GfStatus::Ok);
        assert_eq!(gf_policy_sample(policy, history.as_ptr(), h, 7, a2.as_mut_ptr(), b), GfStatus::Ok);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, a2, "same seed, same block");
        assert_eq!(
            gf_policy_sample(policy, history.as_ptr(), h - 1, 7, a.as_mut_ptr(), b),
            GfStatus::InvalidArgument
        );
        assert_eq!(gf_policy_sample(policy, history.as_ptr(), h, 7, a.as_mut_ptr(), b - 1), GfStatus::InvalidArgument);

        let mut rate = -1.0;
        assert_eq!(gf_policy_evaluate(run, policy, 2, 3, &mut rate), GfStatus::Ok);
        assert!((0.0..=1.0).contains(&rate));
        assert_eq!(gf_policy_evaluate(run, policy, 0, 3, &mut rate), GfStatus::InvalidArgument);

        let mut sampler = ptr::null_mut();
        assert_eq!(gf_sampler_new(run, bottle.as_ptr(), &mut sampler), GfStatus::Ok);
        let mut p1 = [0.0; 3];
        let mut p2 = [0.0; 3];
        assert_eq!(gf_sampler_sample(sampler, 11, p1.as_mut_ptr()), GfStatus::Ok);
        assert_eq!(gf_sampler_sample(sampler, 11, p2.as_mut_ptr()), GfStatus::Ok);
        assert_eq!(p1, p2);
        assert_eq!(gf_sampler_sample(sampler, 11, ptr::null_mut()), GfStatus::NullPointer);

        gf_sampler_free(sampler);
        gf_policy_free(policy);
        gf_run_free(run);
        gf_run_free(ptr::null_mut());
    }
}

#[test]
fn missing_policy_is_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::smoke();
    cfg.out_dir = tmp.path().to_path_buf();
    std::fs::write(tmp.path().join("config.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let bottle = CString::new("bottle").unwrap();
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(gf_run_open(dir.as_ptr(), &mut run), GfStatus::Ok);
        let mut policy = ptr::null_mut();
        assert_eq!(gf_policy_load(run, bottle.as_ptr(), &mut policy), GfStatus::NotFound);
        assert!(policy.is_null());
        let mut sampler = ptr::null_mut();
        assert_eq!(gf_sampler_new(run, bottle.as_ptr(), &mut sampler), GfStatus::NotFound);
        gf_run_free(run);
    }
}

const EXPORTED: [&str; 13] = [
    "gf_last_error_message",
    "gf_version",
    "gf_run_open",
    "gf_run_free",
    "gf_policy_load",
    "gf_policy_free",
    "gf_policy_history_len",
    "gf_policy_block_len",
    "gf_policy_sample",
    "gf_policy_evaluate",
    "gf_sampler_new",
    "gf_sampler_free",
    "gf_sampler_sample",
];

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/graspforge.h")).unwrap();
    for name in EXPORTED {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct GfRun GfRun;"));
    assert!(header.contains("GF_STATUS_PANIC = 5"));
}

#[test]
fn header_compiles_as_c() {
    if !have_cc() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"graspforge.h\"\nint main(void) { GfRun *r = 0; return gf_run_open(\"x\", &r) == GF_STATUS_OK; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn have_cc() -> bool {
    std::process::Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

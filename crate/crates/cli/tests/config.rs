use std::path::PathBuf;

use manytask_cli::config::{ProviderKind, RunConfig};
use manytask_core::proto::DispatchMode;
use proptest::prelude::*;

#[test]
fn defaults_validate() {
    RunConfig::default().validate().unwrap();
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::parse("[dispatcher]\nbundle = 3\n").is_err());
    assert!(RunConfig::parse("[nonsense]\n").is_err());
    let c = RunConfig::parse("[dispatcher]\nbundle_size = 3\nmode = \"pull\"\n").unwrap();
    assert_eq!(c.dispatcher.bundle_size, 3);
    assert_eq!(c.dispatcher.mode, Some(DispatchMode::Pull));
}

#[test]
fn paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("start.sh");
    std::fs::write(&script, "#!/bin/sh\n").unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        "[dispatcher]\nlog_path = \"logs\"\n[provider]\nname = \"script\"\nstart_script = \"start.sh\"\n",
    )
    .unwrap();
    let c = RunConfig::load(Some(&path)).unwrap();
    assert_eq!(c.dispatcher.log_path, dir.path().join("logs"));
    assert_eq!(c.provider.start_script, Some(script));
    assert_eq!(c.provider.name, ProviderKind::Script);

    std::fs::write(&path, "[provider]\nname = \"script\"\nstart_script = \"missing.sh\"\n").unwrap();
    let err = RunConfig::load(Some(&path)).unwrap_err();
    assert!(format!("{err:#}").contains("does not exist"), "{err:#}");
}

#[test]
fn environment_overrides_address_and_log_dir() {
    let mut c = RunConfig::default();
    c.apply_env(|k| match k {
        "MANYTASK_ADDRESS" => Some("10.0.0.1:9".into()),
        "MANYTASK_LOG_DIR" => Some("/var/log/mt".into()),
        _ => None,
    });
    assert_eq!(c.dispatcher.address, "10.0.0.1:9");
    assert_eq!(c.executor_config().dispatcher, "10.0.0.1:9");
    assert_eq!(c.dispatcher_config().log_dir, PathBuf::from("/var/log/mt"));
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        "[dispatcher]\nbundle_size = 0\n",
        "[worker]\ncores = 0\n",
        "[provider]\nblock_size = 6\nworkers_per_block = 4\n",
        "[provider]\nname = \"script\"\n",
        "[model]\nmss = 0.0\n",
        "[bench]\ntime_scale = -1.0\n",
    ] {
        let c = RunConfig::parse(text).unwrap();
        assert!(c.validate().is_err(), "{text}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn effective_config_round_trips(
        bundle in 1usize..100,
        retries in 0u32..5,
        cores in 1u32..64,
        cap in any::<u32>(),
        pull in any::<bool>(),
        block in 1u32..8,
        overhead in 0.0f64..2000.0,
    ) {
        let mut c = RunConfig::default();
        c.dispatcher.bundle_size = bundle;
        c.dispatcher.max_retries = retries;
        c.dispatcher.mode = pull.then_some(DispatchMode::Pull);
        c.worker.cores = cores;
        c.worker.cache_capacity = cap as u64;
        c.provider.block_size = block * 2;
        c.provider.workers_per_block = 2;
        c.model.fixed_overhead = overhead;
        let text = c.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.dispatcher_config(), c.dispatcher_config());
        prop_assert_eq!(back.executor_config(), c.executor_config());
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_highway-rl"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_subcommands_and_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for word in ["train", "eval", "rollout", "compare", "total_env_steps", "clip_epsilon"] {
        assert!(text.contains(word), "help lacks {word}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(&[], dir.path())), 2);
    assert_eq!(code(&cli(&["train"], dir.path())), 2);
    assert_eq!(code(&cli(&["fly", "--config", "x"], dir.path())), 2);

    fs::write(dir.path().join("ppo.toml"), "[experiment]\nagent = \"ppo\"\n").unwrap();
    let out = cli(&["eval", "--config", "ppo.toml"], dir.path());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("--checkpoint"));
}

#[test]
fn config_errors_exit_3_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["train", "--config", "missing.toml"], dir.path());
    assert_eq!(code(&out), 3);

    fs::write(dir.path().join("bad.toml"), "[experiment]\nseeds = [0]\n\n[ppo]\nclip_epsilon = 1.5\n").unwrap();
    let out = cli(&["train", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("bad.toml:5"), "{err}");
    assert!(err.contains("clip_epsilon"), "{err}");

    fs::write(dir.path().join("typo.toml"), "[experiment]\ntotal_env_step = 5\n").unwrap();
    let out = cli(&["train", "--config", "typo.toml"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("typo.toml:2"), "{}", stderr(&out));
}

#[test]
fn bad_checkpoint_exits_5_and_unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dqn.toml"), "[experiment]\nagent = \"dqn\"\neval_episodes = 2\n").unwrap();
    fs::write(dir.path().join("junk.bin"), b"junk").unwrap();
    let out = cli(&["eval", "--config", "dqn.toml", "--checkpoint", "junk.bin"], dir.path());
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let out = cli(&["eval", "--config", "dqn.toml", "--checkpoint", "absent.bin"], dir.path());
    assert!(matches!(code(&out), 4 | 5), "{}", stderr(&out));

    fs::write(dir.path().join("rules.toml"), "[experiment]\nagent = \"rules\"\neval_episodes = 2\n").unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = cli(&["eval", "--config", "rules.toml", "--out", "blocker/sub"], dir.path());
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn train_then_eval_rollout_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("dqn.toml"),
        "[experiment]\nagent = \"dqn\"\nseeds = [5]\ntotal_env_steps = 600\neval_every = 300\neval_episodes = 4\n\
         [dqn]\nlearn_start = 100\nhidden = [16]\n",
    )
    .unwrap();
    let out = cli(&["train", "--config", "dqn.toml", "--out", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = dir.path().join("run/seed_5/checkpoint.bin");
    assert!(ckpt.exists());

    let out = cli(
        &["eval", "--config", "dqn.toml", "--checkpoint", "run/seed_5/checkpoint.bin", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("ev/eval_summary.json").exists());

    let out = cli(
        &["rollout", "--config", "dqn.toml", "--checkpoint", "run/seed_5/checkpoint.bin", "--seed", "3", "--out", "t.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(fs::read_to_string(dir.path().join("t.csv")).unwrap().starts_with("t,x,y,lane,v,action"));

    fs::write(
        dir.path().join("cmp.toml"),
        "[experiment]\neval_episodes = 3\n[compare]\nagents = [\"dqn\", \"rules\", \"random\"]\n\
         [compare.checkpoints]\ndqn = \"run/seed_5/checkpoint.bin\"\n",
    )
    .unwrap();
    let out = cli(&["compare", "--config", "cmp.toml", "--out", "cmp"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("rules") && table.contains("random") && table.contains("dqn"));

    // an agent without a checkpoint is reported and fails the command
    fs::write(dir.path().join("cmp2.toml"), "[compare]\nagents = [\"ppo\", \"rules\"]\n").unwrap();
    let out = cli(&["compare", "--config", "cmp2.toml", "--out", "cmp2"], dir.path());
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ppo"));
}

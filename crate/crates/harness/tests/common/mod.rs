use std::fs;
use std::path::{Path, PathBuf};

/// A campaign small enough to train in a couple of seconds.
pub const TINY: &str = "\
[gen]
train_speakers = 2
val_speakers = 1
test_speakers = 1
reps_per_phrase = 2
extra_normal_speakers = 0

[model]
model_dim = 8
ff_dim = 8
fc_dims = 8

[train]
lr = 0.003
epochs = 3
patience = 2

[language]
epochs = 3
patience = 2
embed_dim = 4
hidden_dim = 8
";

/// Writes `TINY` plus `extra` to `dir/name.ini`.
pub fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.ini"));
    fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path
}

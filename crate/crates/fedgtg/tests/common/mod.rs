use std::path::Path;

/// A config small enough to run end to end in a few seconds.
pub fn tiny_config(output_dir: &Path, method: &str) -> String {
    format!(
        r#"
name = "tiny"
dataset = "synthetic"
method = "{method}"
n_tasks = 2
n_clients = 3
participation_rate = 1.0
rounds_per_task = 1
local_epochs = 1
seeds = [0, 1]
output_dir = "{out}"
efm_samples = 8

[synthetic]
n_classes = 4
image_size = 8
train_per_class = 12
test_per_class = 6

[arch]
kind = "small-cnn"
input = [3, 8, 8]
channels = [4]
feature_dim = 8

[generator]
noise_dim = 8
base_channels = 4
hidden = 8

[generator_budget]
steps = 2
batch_size = 8
lr = 0.01

[eval]
flatness_sigmas = [0.0, 0.01]
flatness_trials = 2
flatness_max_per_task = 10
corruptions = [{{ kind = "gaussian_noise", severity = 3 }}, {{ kind = "contrast", severity = 5 }}]
"#,
        out = output_dir.display()
    )
}

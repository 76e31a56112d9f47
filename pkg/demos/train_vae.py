"""Train the graph VAE on a small corpus and evaluate reconstruction.

Scales down everything so the whole run takes about a minute; the configs/
directory holds the settings used for real runs.
"""

from dagspace.metrics import prior_validity, reconstruction_accuracy, uniqueness
from dagspace.metrics import sample_prior_decodes
from dagspace.rng import substream
from dagspace.space import SearchSpace, sample_random, validate
from dagspace.train import TrainConfig, iterated_training, split_dataset

space = SearchSpace(num_op_layers=3, operations=("conv3x3", "maxpool3x3"))
rng = substream(7, "data")
corpus = [sample_random(space, rng) for _ in range(300)]

config = TrainConfig(
    epochs_per_iteration=30,
    iterations=2,
    batch_size=16,
    learning_rate=1e-3,
    kl_weight=0.01,
    hidden=32,
    latent=12,
    d_op=2,
    seed=7,
)

model, histories, snapshots = iterated_training(config, corpus, space)

for it, history in enumerate(histories, start=1):
    first, last = history[0], history[-1]
    print(
        f"iteration {it}: recon {first.recon_loss:.3f} -> {last.recon_loss:.3f}, "
        f"kl {last.kl:.3f}"
    )

# snapshots hold the embedding table after each iteration; the table is the
# only state carried across the re-initialization boundary
drift = [float(abs(snapshots[i + 1] - snapshots[i]).max()) for i in range(len(snapshots) - 1)]
print(f"embedding drift between iterations: {[f'{d:.3f}' for d in drift]}")

train_dags, test_dags = split_dataset(corpus, config.train_fraction, config.seed)
acc = reconstruction_accuracy(model, test_dags, 10, 10, substream(7, "eval"))
validity = prior_validity(model, 200, 5, substream(7, "eval"))
decodes = sample_prior_decodes(model, 200, 5, substream(7, "eval"))
valid = [d for d in decodes if validate(d).is_valid]
print(f"\nreconstruction accuracy: {acc:.1f}%")
print(f"prior validity:          {validity:.1f}%")
print(f"uniqueness of valid:     {uniqueness(valid):.1f}%")

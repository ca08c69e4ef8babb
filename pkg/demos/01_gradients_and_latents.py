"""Check the loss gradient against finite differences and the Gumbel sampler against softmax.

    python3 demos/01_gradients_and_latents.py
"""
import numpy as np

from podnet import latent, nn
from podnet import model as M
from podnet.data import Trajectory


def main():
    rng = np.random.default_rng(0)
    mdl = M.PodnetModel.init(2, 2, 1, rng, hidden=4, mlp_hidden=(4, 4))
    trajs = [Trajectory(f"t{i}", "x", rng.normal(size=(4, 2)), rng.normal(size=(3, 1))) for i in range(2)]
    batch = M.Batch.from_trajectories(trajs)
    hyper = M.LossHyper(beta=0.1, tau=0.7, H=2)
    noise = M.draw_noise(batch, 2, rng)
    # freeze the sampled labels so the loss is smooth in the parameters
    _, trace = M.loss_terms(mdl.params, mdl, batch, hyper, noise)
    err = nn.finite_difference_check(
        lambda p: M.loss_terms(p, mdl, batch, hyper, noise, frozen=trace)[0]["total"], mdl.params)
    print(f"max relative gradient error: {err:.2e}")

    logits = np.array([1.0, 0.0, -1.0, 2.0])
    lab = latent.sample_gumbel_softmax(np.broadcast_to(logits, (100_000, 4)), 1.0, rng)
    print("softmax        ", np.round(latent.softmax(logits), 4))
    print("hard frequency ", np.round(lab.hard.mean(axis=0), 4))
    for p in ([0.25] * 4, [1, 0, 0, 0], [0.5, 0.5, 0, 0]):
        print(f"KL({p} || uniform) = {latent.kl_to_uniform(p):.6f}")


if __name__ == "__main__":
    main()

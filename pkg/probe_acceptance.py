"""Pre-flight probe for the acceptance run: timing + separation sanity."""
import time

import numpy as np

from radood import bench, cvae, rng, scores
from radood.classical import AnmfFpDetector
from radood.sigmodel import Scenario, inject_target, sample_clutter

t0 = time.time()
sc = Scenario(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0, seed=0)
data = sample_clutter(sc, 15000, stream="train").signals
print(f"data: {time.time()-t0:.1f}s", flush=True)

# -- q=12 / beta=100 model, 6 epochs to time one epoch and check MSE separation
t0 = time.time()
m12 = cvae.CvaeModel(q=12, m=16, beta=100.0, seed=0)
cfg = cvae.TrainConfig(epochs=6, lr=1e-3, batch=128, beta=100.0, q=12, seed=0)
hist = cvae.train(m12, data, cfg)
dt = time.time() - t0
print(f"q12 6 epochs: {dt:.1f}s ({dt/6:.1f}s/epoch, x50 = {dt/6*50/60:.1f} min)",
      flush=True)
print("  losses:", [f"{v:.4f}" for v in hist["train_loss"]], flush=True)

t0 = time.time()
m32 = cvae.CvaeModel(q=32, m=16, beta=1e-3, seed=1)
cfg32 = cvae.TrainConfig(epochs=6, lr=1e-3, batch=128, beta=1e-3, q=32, seed=1)
hist32 = cvae.train(m32, data, cfg32)
dt32 = time.time() - t0
print(f"q32 6 epochs: {dt32:.1f}s", flush=True)
print("  losses:", [f"{v:.4f}" for v in hist32["train_loss"]], flush=True)

# -- separation at 25 dB with 6-epoch models
null_profiles = sample_clutter(sc, 5000, stream="null-fit").signals
null_kl = scores.fit_null_kl(m32, null_profiles)
null_maha = scores.fit_null_maha(m32, null_profiles, gen=rng.derive(0, "maha-fit"))

h0 = sample_clutter(sc, 3000, stream="probe-h0")
sc25 = Scenario(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0, seed=0,
                snr_db=25.0, doppler_bin=5)
h1 = inject_target(sample_clutter(sc25, 3000, stream="probe-h1"))

dets = {
    "mse": bench.MseDetector(m12),
    "kld": bench.KldDetector(m32, null_kl),
    "maha": bench.MahaDetector(m32, null_maha, seed=0),
}
for name, det in dets.items():
    s0 = det.scores(h0, stream="probe0")
    s1 = det.scores(h1, stream="probe1")
    thr = np.quantile(s0, 0.99)
    pd = float(np.mean(s1 > thr))
    print(f"{name}: thr(q99)={thr:.4g} pd@25dB(bin5)~{pd:.3f} "
          f"h0 med={np.median(s0):.4g} h1 med={np.median(s1):.4g}", flush=True)

# -- mid-SNR ordering probe (criterion 7c risk): 10 dB
sc10 = Scenario(m=16, rho=0.5, clutter_kind="cGN", cnr_db=15.0, seed=0,
                snr_db=10.0, doppler_bin=5)
h1m = inject_target(sample_clutter(sc10, 3000, stream="probe-h1m"))
for name, det in dets.items():
    s0 = det.scores(h0, stream="probe0")
    s1 = det.scores(h1m, stream="probe2")
    pd = float(np.mean(s1 > np.quantile(s0, 0.99)))
    print(f"{name}: pd@10dB(bin5)~{pd:.3f}", flush=True)

# -- ANMF timing at trial scale
t0 = time.time()
det = AnmfFpDetector(sc)
s = det.scores(h0, stream="probe-anmf")
dt = time.time() - t0
print(f"anmf 3000 trials: {dt:.1f}s ({dt/3000*1e3:.2f} ms/trial); "
      f"full sweep 2000x6x16 = {dt/3000*2000*96/60:.1f} min", flush=True)
print("probe done", flush=True)

"""Walk through the degradation pipeline and the quality metrics.

Synthesizes one aligned IR/visible pair, degrades the IR image at several
blur strengths, and reports PSNR / MSE / SSIM of each bicubic
reconstruction against the original. More blur in, worse numbers out.

Run:  python demos/01_degradation_and_metrics.py
"""

import os
import tempfile

from dasr.imaging import bicubic_resize, gaussian_blur, save_image
from dasr.metrics import metric_report
from dasr.synth import SyntheticSceneSpec, render_pair

out_dir = tempfile.mkdtemp(prefix="dasr_demo1_")
ir, vis = render_pair(SyntheticSceneSpec(count=1, extent=96, seed=42), 0)
save_image(ir, os.path.join(out_dir, "ir.png"))
save_image(vis, os.path.join(out_dir, "vis.png"))
print(f"wrote the aligned pair to {out_dir}")

print("\nblur sigma | PSNR (dB) |   MSE   | SSIM   (bicubic x2 round trip)")
for sigma in (0.0, 1.0, 3.0, 5.0):
    degraded = gaussian_blur(ir, sigma) if sigma > 0 else ir
    lr = bicubic_resize(degraded, ir.height // 2, ir.width // 2)
    rec = bicubic_resize(lr, ir.height, ir.width)
    rep = metric_report(ir, rec)
    print(f"   {sigma:4.1f}    |  {rep.psnr:7.3f}  | {rep.mse:7.4f} |"
          f" {rep.ssim:.4f}")

print("\nPSNR and SSIM fall monotonically as the input gets blurrier;")
print("that direction is what the degradation ablation checks at scale.")

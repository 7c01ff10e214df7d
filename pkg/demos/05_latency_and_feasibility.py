"""What each strategy ships to the cloud, and which frame rates the device keeps up with."""
from edgemem import CostModel, Scenario, check_realtime_feasibility, simulate_strategies

colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0], [0, 255, 255], [255, 0, 255]]
scenario = Scenario.from_dict({
    "stream": {"kind": "synthetic", "fps": 8.0, "width": 8, "height": 8, "seed": 4,
               "scenes": [{"duration_s": 100, "base_color": c, "noise_level": 0.01} for c in colors]},
    "queries": [{"text": "red", "ground_truth_scene": 0}, {"text": "blue", "ground_truth_scene": 2}],
    "config": {"segmenter": {"scene_threshold": 0.05}, "clusterer": {"downscale_edge": 8},
               "retrieval": {"temperature": 0.1}},
    "budget": 32,
    "repeats": 5,
})
report = simulate_strategies(scenario)
print(f"{report.stream_frames} frames, {report.ingestion.indexed_frames} index frames")
print(f"{'strategy':15s} {'frames':>8s} {'MB':>8s} {'device':>7s} {'network':>8s} {'cloud':>8s} {'total':>8s} hit")
for name, row in report.rows.items():
    print(f"{name:15s} {row.frames_sent:8.1f} {row.bytes_sent / 1e6:8.1f} {row.on_device_s:7.3f} "
          f"{row.transmission_s:8.3f} {row.cloud_s:8.2f} {row.total_s:8.2f} {row.hit_rate}")
print(f"ingestion work, reported apart from per-query cost: {report.rows['venus_akr'].ingestion_s:.1f}s")

# embedding every frame vs embedding only index frames
device = CostModel(embed_latency_s=1 / 1.8)
fps = [1, 1.8, 2, 8, 25]
dense = check_realtime_feasibility(fps, device)
sparse = check_realtime_feasibility(fps, device, report.ingestion.sparsification_ratio)
print(f"dense max fps {dense.max_sustainable_fps:.2f}; sparse max fps {sparse.max_sustainable_fps:.1f}")
for a, b in zip(dense.rows, sparse.rows):
    verdict = ["ok" if r.sustainable else "backlog" for r in (a, b)]
    print(f"{a.fps:5.1f} fps  dense {verdict[0]}  sparse {verdict[1]}")

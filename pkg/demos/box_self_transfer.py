"""Learn a single cable contact on a box top, then find it again on the same cloud.

Run: python demos/box_self_transfer.py
"""
# %%
import math

import numpy as np

from aerialcontact import DemonstrationRecord, TransferParams, build_query_density, learn_models, optimize
from aerialcontact.geom import geodesic_angle
from aerialcontact.synthetic import box_top_demo

# an open box seen from above; the gripper touches the middle of the top face
cloud, links = box_top_demo()
drone, link = links[0]
print(f"{len(cloud)} points, drone at {drone.p}, link at {link.p}")

# %%
# one demonstration is enough to fit all four models
bundle = learn_models(DemonstrationRecord(cloud, links, label="box"), seed=0)
tw = bundle.task.density.weights
print("object kernels", len(bundle.object.density), " task kernels", len(tw),
      " heaviest task weight %.3f" % tw.max())

# %%
# query density over link poses: kernels placed on the query cloud, weighted by how well
# the local surface matches the learned contact, and by support from the task offsets
params = TransferParams(seed=0)
q = build_query_density(bundle.contact, bundle.task, cloud, params)
ql = q.links[0]
heavy = np.argsort(ql.log_weights)[::-1][:5]
print("heaviest query kernels (x, y, z):")
print(np.round(ql.positions[heavy], 3))

# %%
cands = optimize(q, bundle.configuration, params, query_cloud=cloud, k=5)
for rank, c in enumerate(cands):
    L = c.links[0]
    print(f"#{rank} log J {c.log_j:8.3f}  feasible {c.feasible}  "
          f"offset {np.linalg.norm(L.p - link.p) * 100:5.2f} cm  "
          f"rotation {math.degrees(geodesic_angle(L.q, link.q)):5.2f} deg")

# the best-so-far trace of the winning chain never goes down
trace = cands[0].trace
print("trace start %.2f, after annealing %.2f, final %.2f" % (trace[0], trace[params.steps - 1], trace[-1]))

"""Three drones carrying a triangular plate: transfer the formation to a resampled plate.

Run: python demos/triangle_formation.py   (about 15 s)
"""
# %%
import numpy as np

from aerialcontact import DemonstrationRecord, PointCloud, TransferParams, build_query_density, learn_models, optimize
from aerialcontact.synthetic import triangle_demo, triangle_plate

cloud, links = triangle_demo()
demo = np.array([L.p for _, L in links])
pairs = [(0, 1), (1, 2), (2, 0)]
demo_d = np.array([np.linalg.norm(demo[i] - demo[j]) for i, j in pairs])
print("demo inter-link distances (m):", np.round(demo_d, 3))

# %%
bundle = learn_models(DemonstrationRecord(cloud, links, label="triangle"), seed=0)
print("contact kernels per link:", [len(cl) for cl in bundle.contact.links])

# a congruent plate sampled on a different grid, so no point coincides with the demo cloud
query = PointCloud(triangle_plate(0.8, 0.05, spacing=0.012))

# %%
params = TransferParams(seed=0)
q = build_query_density(bundle.contact, bundle.task, query, params)
cands = optimize(q, bundle.configuration, params, query_cloud=query, k=3)
top = next(c for c in cands if c.feasible)
got = np.array([L.p for L in top.links])
d = np.array([np.linalg.norm(got[i] - got[j]) for i, j in pairs])
print("transferred distances (m):  ", np.round(d, 3))
print("relative error:             ", np.round(d / demo_d - 1, 3))
for n, (b, L) in enumerate(top.pairs):
    print(f"drone {n}: link {np.round(L.p, 3)}  drone {np.round(b.p, 3)}")

# %%
# the configuration model compares formations about their centroid and adds the centroid
# offset once, so shifting the whole formation costs the same as shifting one link
from aerialcontact.models import configuration_eval
from aerialcontact.geom import Pose

h = bundle.configuration
base = configuration_eval(h, links)
shifted = [(b, Pose(L.p + [0.01, 0, 0], L.q)) for b, L in links]
one = [(links[0][0], Pose(links[0][1].p + [0.01, 0, 0], links[0][1].q))] + links[1:]
print("log H: demo %.2f, formation shifted 1 cm %.2f, one link shifted 1 cm %.2f"
      % tuple(np.log([base, configuration_eval(h, shifted), configuration_eval(h, one)])))

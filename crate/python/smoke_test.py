"""Quick check that the extension imports and the main entry points respond."""
import json
import math

import maharam

z = maharam.GroupModel("Z")
assert z.ball(1) == ["0", "-1", "1"], z.ball(1)
assert z.mul("2", "-5") == "-3"
assert z.inv("4") == "-4"

fam = maharam.MarginalFamily.finitely_perturbed("Z", {"0": 0.6})
assert abs(fam.mu0("0") - 0.6) < 1e-15
e0, e1 = fam.eta("0")
assert abs(e0 - math.log(1.2)) < 1e-12 and abs(e1 - math.log(0.8)) < 1e-12

x = fam.sample(7).with_values({"0": 0, "-1": 1})
value, radius, mean_b, std_b = fam.rn_cocycle("1", x, 5)
assert abs(value - 0.405465108) < 1e-6, value

demo = maharam.MarginalFamily.z_demo()
assert demo.kakutani_partial("1", 1000) > 0
assert demo.divergence_partial(1000) > demo.divergence_partial(100)

phi = demo.build_phi(0.3, 0.2, ["0"])
print("phi horizon", phi.horizon, "support size", len(phi.support()))

cfg = {"master_seed": 1, "group": {"kind": "Z"}, "family": {"kind": "z_demo"},
       "experiments": [{"kind": "kakutani", "g": "1", "radii": [10, 100]}]}
rep = json.loads(maharam.run_report(json.dumps(cfg)))
assert rep["experiments"][0]["kind"] == "kakutani"

print("maharam", maharam.__version__, "smoke test ok")

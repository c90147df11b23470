"""Regenerate the small grounding dataset under fixtures/ground/.

Scenes are rendered from the simulator (isolated layouts, five objects) and
annotated by object name; the label IDs are resolved from the rendering.
"""

import json
import os
import sys

from owg.imaging import save_scene
from owg.sim import SimEnv

QUERIES = [
    # (seed, object, query type, query)
    (0, "book", "name", "the book"),
    (0, "pringles can", "attribute", "the tall red cylinder"),
    (0, "soda can", "spatial_relation", "the can closest to the bottom right corner"),
    (0, "milk carton", "semantic_relation", "something I can pour into my cereal"),
    (1, "bowl", "name", "the bowl"),
    (1, "flashlight", "affordance", "something to light up a dark room"),
    (1, "glue stick", "visual_relation", "the small object left of the bowl"),
    (1, "red mug", "multi_hop", "the mug that is next to the soda can"),
    (2, "green apple", "attribute", "the green fruit"),
    (2, "sponge", "affordance", "something to wipe the table with"),
    (2, "soda can", "spatial_relation", "the can at the far right"),
    (3, "blue mug", "name", "the blue mug"),
    (3, "cereal box", "semantic_relation", "breakfast in a box"),
    (3, "juice box", "multi_hop", "the drink that is between the flashlight and the mug"),
    (3, "milk carton", "visual_relation", "the carton that is further from the flashlight"),
]


def main(out="fixtures/ground"):
    os.makedirs(out, exist_ok=True)
    rows = []
    envs = {}
    for seed, obj, qtype, query in QUERIES:
        if seed not in envs:
            env = SimEnv.generate("isolated", seed, 5)
            env.observe()
            save_scene(os.path.join(out, f"scene_{seed:02d}.json"), env.last.obs, env.last.mask)
            envs[seed] = env
        rows.append({"scene": f"scene_{seed:02d}.json", "query": query, "type": qtype,
                     "target_id": envs[seed].last.label_of(obj)})
    with open(os.path.join(out, "annotations.json"), "w") as f:
        json.dump(rows, f, indent=1)
        f.write("\n")
    print(f"wrote {len(rows)} samples over {len(envs)} scenes to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])

# Checks the sample configs and generated manifests against the schemas in docs/.
import glob
import json
import os
import sys

import jsonschema

docs, work = sys.argv[1], sys.argv[2]


def load(path):
    with open(path) as f:
        return json.load(f)


schemas = {k: load(os.path.join(docs, k + ".schema.json")) for k in ("recipe", "fixture", "manifest")}
for s in schemas.values():
    jsonschema.Draft202012Validator.check_schema(s)

checked = 0
for path in sorted(glob.glob(os.path.join(work, "*.json"))):
    kind = "fixture" if os.path.basename(path).startswith("fixture") else "recipe"
    jsonschema.validate(load(path), schemas[kind], cls=jsonschema.Draft202012Validator)
    checked += 1
for path in sorted(glob.glob(os.path.join(work, "out", "*.manifest.json"))):
    jsonschema.validate(load(path), schemas["manifest"], cls=jsonschema.Draft202012Validator)
    checked += 1
print(f"schemas ok ({checked} documents)")

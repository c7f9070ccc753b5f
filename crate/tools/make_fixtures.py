#!/usr/bin/env python3
"""Regenerates tasks/*.json and fixtures/*.json.

The embedding fixtures are synthetic. Each train label gets a random anchor
direction. A test label is built as `c * anchor + sqrt(1 - c^2) * noise`,
with the cosine `c` chosen per label and per space. Confounds get a *higher*
cosine to a train anchor than the relevant labels do. No threshold can then
separate them from relevant labels.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
DIM = 48
VIEWS = 3  # vision vectors per label, as if from several images

REL_COS = 0.72  # relevant test label -> its ground-truth train anchor
CONF_COS = 0.87  # engineered confound -> the anchor it is confused with
WEAK_COS = 0.45  # loosely related label -> some anchor
TEXT_DIM = 32


def unit(v):
    return v / np.linalg.norm(v)


def toward(rng, anchor, c):
    noise = rng.standard_normal(anchor.shape)
    noise -= noise.dot(anchor) * anchor
    return c * anchor + np.sqrt(1.0 - c * c) * unit(noise)


def build_space(rng, train, links, views):
    """`links` maps a test label to `(anchor, cosine)` or None (random)."""
    anchors = {t: unit(rng.standard_normal(DIM)) for t in train}
    base = dict(anchors)
    for label, link in links.items():
        if link is None:
            base[label] = unit(rng.standard_normal(DIM))
        else:
            anchor, c = link
            base[label] = toward(rng, anchors[anchor], c)
    vectors = {}
    for label, v in base.items():
        if views == 1:
            vectors[label] = [[round(x, 6) for x in v]]
        else:
            # Zero-mean jitter so the average stays exactly on `v`.
            jit = rng.standard_normal((views, DIM)) * 0.05
            jit -= jit.mean(axis=0)
            vectors[label] = [[round(x, 6) for x in (v + j)] for j in jit]
    return vectors


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def catalog(labels, relevant):
    return [
        {"label": l, "tags": ["relevant"]} if l in relevant else {"label": l}
        for l in labels
    ]


def py_dict(d):
    lines = [f"    {k!r}: {v!r}," for k, v in d.items()]
    return "{\n" + "\n".join(lines) + "\n}"


def intent_response(motivations, similarities):
    return (
        "Looking at which objects the preferred trajectories approach or avoid, "
        "the human appears to care about object categories rather than motion "
        "style.\n\n"
        f"motivations = {py_dict(motivations)}\n\n"
        f"semantic_similarities = {py_dict(similarities)}\n"
    )


FAMILIES = {}


def family(name, train, test, carried, vision_links, language_links):
    FAMILIES[name] = dict(
        train=train,
        test=test,
        carried=carried,
        vision=vision_links,
        language=language_links,
    )


# ---------------------------------------------------------------------------
# Object families. Links list the cosine of each test label to a train anchor.

family(
    "place_mug",
    train=["laptop", "notebook", "plate", "fruit_bowl", "flower_pot", "pen_holder"],
    test=["tablet", "paperback", "keyboard", "laptop_sleeve", "cutting_board", "wine_glass", "banana"],
    carried="mug",
    vision_links={
        "tablet": ("laptop", REL_COS),
        "paperback": ("notebook", REL_COS),
        "keyboard": ("laptop", REL_COS),
        "laptop_sleeve": ("laptop", WEAK_COS),
        "cutting_board": ("laptop", CONF_COS),
        "wine_glass": ("flower_pot", WEAK_COS),
        "banana": ("fruit_bowl", 0.6),
    },
    language_links={
        "tablet": ("laptop", REL_COS),
        "paperback": ("notebook", REL_COS),
        "keyboard": ("laptop", REL_COS),
        "laptop_sleeve": ("laptop", CONF_COS),
        "cutting_board": ("plate", WEAK_COS),
        "wine_glass": ("plate", 0.5),
        "banana": ("fruit_bowl", 0.6),
    },
)

family(
    "sweep_spill",
    train=["apple", "bread", "stapler", "scissors", "remote_control", "candle"],
    test=["banana", "bagel", "orange", "muffin", "breadboard", "tennis_ball", "sandwich_bag", "tape_dispenser"],
    carried="sponge",
    vision_links={
        "banana": ("apple", REL_COS),
        "bagel": ("bread", REL_COS),
        "orange": ("apple", REL_COS),
        "muffin": ("bread", REL_COS),
        "breadboard": ("remote_control", WEAK_COS),
        "tennis_ball": ("apple", CONF_COS),
        "sandwich_bag": ("bread", WEAK_COS),
        "tape_dispenser": ("stapler", 0.6),
    },
    language_links={
        "banana": ("apple", REL_COS),
        "bagel": ("bread", REL_COS),
        "orange": ("apple", REL_COS),
        "muffin": ("bread", REL_COS),
        "breadboard": ("bread", CONF_COS),
        "tennis_ball": ("candle", 0.3),
        "sandwich_bag": ("bread", 0.6),
        "tape_dispenser": ("stapler", 0.6),
    },
)

family(
    "pack_backpack",
    train=["paintbrush", "sketchbook", "novel", "magazine", "dish_sponge", "stapler", "coffee_mug", "tv_remote"],
    test=[
        "molding_clay", "colored_pencils", "drawing_pad", "comic_book", "textbook", "newspaper",
        "toothbrush", "broomstick", "dish_scrubber", "paper_towels", "calculator",
    ],
    carried=None,
    vision_links={
        "molding_clay": ("paintbrush", 0.66),
        "colored_pencils": ("paintbrush", REL_COS),
        "drawing_pad": ("novel", CONF_COS),
        "comic_book": ("magazine", REL_COS),
        "textbook": ("novel", REL_COS),
        "newspaper": ("magazine", REL_COS),
        "toothbrush": ("dish_sponge", WEAK_COS),
        "broomstick": ("paintbrush", 0.6),
        "dish_scrubber": ("paintbrush", CONF_COS),
        "paper_towels": ("dish_sponge", 0.55),
        "calculator": ("tv_remote", 0.6),
    },
    language_links={
        "molding_clay": ("paintbrush", 0.66),
        "colored_pencils": ("paintbrush", REL_COS),
        "drawing_pad": ("sketchbook", REL_COS),
        "comic_book": ("magazine", REL_COS),
        "textbook": ("novel", REL_COS),
        "newspaper": ("magazine", REL_COS),
        "toothbrush": ("paintbrush", CONF_COS),
        "broomstick": ("paintbrush", 0.84),
        "dish_scrubber": ("dish_sponge", 0.6),
        "paper_towels": ("magazine", CONF_COS),
        "calculator": ("tv_remote", WEAK_COS),
    },
)

family(
    "store_drawer",
    train=["diamond_ring", "gold_watch", "smartphone", "earbuds", "cereal_box", "tape_roll", "rubber_duck", "water_bottle"],
    test=[
        "pearl_necklace", "silver_bracelet", "cufflinks", "tablet", "headphones", "usb_drive",
        "paper_ring", "toy_watch", "ring_binder", "phone_case", "granola_bar",
    ],
    carried=None,
    vision_links={
        "pearl_necklace": ("diamond_ring", REL_COS),
        "silver_bracelet": ("diamond_ring", REL_COS),
        "cufflinks": ("gold_watch", 0.66),
        "tablet": ("smartphone", REL_COS),
        "headphones": ("earbuds", REL_COS),
        "usb_drive": ("smartphone", 0.66),
        "paper_ring": ("diamond_ring", CONF_COS),
        "toy_watch": ("gold_watch", CONF_COS),
        "ring_binder": ("tape_roll", WEAK_COS),
        "phone_case": ("smartphone", 0.6),
        "granola_bar": ("cereal_box", 0.6),
    },
    language_links={
        "pearl_necklace": ("diamond_ring", REL_COS),
        "silver_bracelet": ("diamond_ring", REL_COS),
        "cufflinks": ("gold_watch", 0.66),
        "tablet": ("smartphone", REL_COS),
        "headphones": ("earbuds", REL_COS),
        "usb_drive": ("smartphone", 0.66),
        "paper_ring": ("diamond_ring", 0.6),
        "toy_watch": ("gold_watch", 0.6),
        "ring_binder": ("diamond_ring", CONF_COS),
        "phone_case": ("smartphone", CONF_COS),
        "granola_bar": ("cereal_box", 0.6),
    },
)


# ---------------------------------------------------------------------------
# Tasks.


def ee(label):
    return f"ee_proximity_to_{label}"


def held(carried, label):
    return f"{carried}_proximity_to_{label}"


def task(
    name,
    fam,
    intent,
    generic,
    task_string,
    relevant_train,
    relevance,
    confounds,
    theta,
    motivations,
    similarities,
    axes,
    blind,
):
    f = FAMILIES[fam]
    relevant_test = {k for k, v in relevance.items() if v != "distractor"}
    full_relevance = {l: relevance.get(l, "distractor") for l in f["test"]}
    spec = {
        "schema_version": 1,
        "name": name,
        "ground_truth_intent": intent,
        "generic_baseline_intent": generic,
        "task_string": task_string,
        "workspace": {"min": [0.0, 0.0, 0.0], "max": [1.0, 1.0, 0.5]},
        "d_max": 0.5,
        "composition": {"relevant": 1, "other": 2},
        "ground_truth_theta": theta,
        "train_catalog": catalog(f["train"], relevant_train),
        "test_catalog": catalog(f["test"], relevant_test),
        "confound_sets": confounds,
        "relevance_labels": full_relevance,
        "oracle": {
            "intent_response": intent_response(motivations, similarities),
            "axes_response": py_dict(axes),
            "blind_overrides": blind,
        },
    }
    if f["carried"]:
        spec["carried"] = f["carried"]
        # Keep key order stable and readable.
        spec = {k: spec[k] for k in [
            "schema_version", "name", "ground_truth_intent", "generic_baseline_intent",
            "task_string", "workspace", "carried", "d_max", "composition",
            "ground_truth_theta", "train_catalog", "test_catalog", "confound_sets",
            "relevance_labels", "oracle",
        ]}
    return spec


GENERIC = "The human prefers to move objects."

TASKS = []

mug_rel = ["laptop", "notebook"]
TASKS.append(task(
    "place_mug", "place_mug",
    intent="avoid carrying fluids near water-sensitive objects",
    generic=GENERIC,
    task_string="Carry the mug to the goal location on the table.",
    relevant_train=mug_rel,
    relevance={"tablet": "laptop", "paperback": "notebook", "keyboard": "laptop"},
    confounds={"S_lang": ["laptop_sleeve"], "S_vis": ["cutting_board"], "S_unk": ["wine_glass"]},
    theta={
        **{ee(l): -1.0 for l in mug_rel},
        **{held("mug", l): -1.0 for l in mug_rel},
        "gripper_tilt": -1.0,
    },
    motivations={
        "The human keeps the liquid-filled container away from electronic devices and paper items that a spill would damage.":
            [ee("laptop"), ee("notebook"), held("mug", "laptop"), held("mug", "notebook")],
        "The human keeps the container upright so that its contents do not slosh out.": ["gripper_tilt"],
        "The human avoids passing over valuable work equipment while carrying a drink.":
            [held("mug", "laptop"), ee("laptop")],
    },
    similarities={
        "Would this item be damaged if liquid spilled on it?":
            [held("mug", "laptop"), held("mug", "notebook")],
    },
    axes={
        "Would this object be damaged by a liquid spill?": ["laptop", "notebook"],
        "Is this a container for drinks?": ["mug"],
    },
    blind={"laptop_sleeve": "laptop", "cutting_board": "notebook"},
))

spill_rel = ["apple", "bread"]
TASKS.append(task(
    "sweep_spill", "sweep_spill",
    intent="Keep the dirty sponge away from food so nothing edible gets contaminated while cleaning.",
    generic=GENERIC,
    task_string="Wipe the spill with the sponge and carry it to the sink corner.",
    relevant_train=spill_rel,
    relevance={"banana": "apple", "bagel": "bread", "orange": "apple", "muffin": "bread"},
    confounds={"S_lang": ["breadboard"], "S_vis": ["tennis_ball"], "S_unk": ["sandwich_bag"]},
    theta={
        **{ee(l): -1.0 for l in spill_rel},
        **{held("sponge", l): -1.0 for l in spill_rel},
        "gripper_tilt": -0.1,
    },
    motivations={
        "The human keeps the dirty cleaning tool away from food so that nothing edible is contaminated.":
            [held("sponge", "apple"), held("sponge", "bread"), ee("apple"), ee("bread")],
        "The human avoids dripping dirty water onto things people will eat.":
            [held("sponge", "apple"), held("sponge", "bread")],
        "The human keeps the sponge level so that it does not drip.": ["gripper_tilt"],
    },
    similarities={
        "Is this something people eat?": [held("sponge", "apple"), held("sponge", "bread")],
    },
    axes={
        "Is this a food item?": ["apple", "bread"],
        "Is this a cleaning tool?": ["sponge"],
    },
    blind={"breadboard": "bread", "tennis_ball": "apple"},
))

ART = {"molding_clay": "paintbrush", "colored_pencils": "paintbrush", "drawing_pad": "sketchbook"}
READ = {"comic_book": "magazine", "textbook": "novel", "newspaper": "magazine"}
PACK_OTHER = ["dish_sponge", "stapler", "coffee_mug", "tv_remote"]

TASKS.append(task(
    "pack_backpack", "pack_backpack",
    intent="pack art supplies",
    generic=GENERIC,
    task_string="Pick items from the table and place them in the backpack.",
    relevant_train=["paintbrush", "sketchbook"],
    relevance=ART,
    confounds={"S_lang": ["toothbrush", "broomstick"], "S_vis": ["dish_scrubber"], "S_unk": ["comic_book"]},
    theta={
        ee("paintbrush"): 2.0,
        ee("sketchbook"): 2.0,
        **{ee(l): -0.5 for l in ["novel", "magazine"] + PACK_OTHER},
        "gripper_tilt": -0.3,
    },
    motivations={
        "pack art supplies": [ee("paintbrush"), ee("sketchbook")],
        "The human gathers tools for a drawing or painting session.": [ee("paintbrush"), ee("sketchbook")],
        "The human leaves household and reading items behind.": [ee("novel"), ee("dish_sponge")],
    },
    similarities={
        "Is this used to make art?": [ee("paintbrush"), ee("sketchbook")],
    },
    axes={
        "Is this an art supply?": ["paintbrush", "sketchbook"],
        "Is this reading material?": ["novel", "magazine"],
        "Is this a household item?": PACK_OTHER,
    },
    blind={"toothbrush": "paintbrush", "comic_book": "sketchbook", "broomstick": "paintbrush"},
))

TASKS.append(task(
    "pack_backpack_reading", "pack_backpack",
    intent="pack reading material",
    generic=GENERIC,
    task_string="Pick items from the table and place them in the backpack.",
    relevant_train=["novel", "magazine"],
    relevance=READ,
    confounds={"S_lang": ["paper_towels"], "S_vis": ["drawing_pad"], "S_unk": ["calculator"]},
    theta={
        ee("novel"): 2.0,
        ee("magazine"): 2.0,
        **{ee(l): -0.5 for l in ["paintbrush", "sketchbook"] + PACK_OTHER},
        "gripper_tilt": -0.3,
    },
    motivations={
        "pack reading material": [ee("novel"), ee("magazine")],
        "The human gathers things to read during a trip.": [ee("novel"), ee("magazine")],
        "The human leaves art and household items behind.": [ee("paintbrush"), ee("dish_sponge")],
    },
    similarities={
        "Is this something you read?": [ee("novel"), ee("magazine")],
    },
    axes={
        "Is this reading material?": ["novel", "magazine"],
        "Is this an art supply?": ["paintbrush", "sketchbook"],
        "Is this a household item?": PACK_OTHER,
    },
    blind={"paper_towels": "magazine", "drawing_pad": "novel", "calculator": "novel"},
))

VALUE = {"pearl_necklace": "diamond_ring", "silver_bracelet": "diamond_ring", "cufflinks": "gold_watch"}
ELEC = {"tablet": "smartphone", "headphones": "earbuds", "usb_drive": "smartphone"}
DRAWER_OTHER = ["cereal_box", "tape_roll", "rubber_duck", "water_bottle"]

TASKS.append(task(
    "store_drawer", "store_drawer",
    intent="store valuables",
    generic=GENERIC,
    task_string="Pick items from the table and put them in the drawer.",
    relevant_train=["diamond_ring", "gold_watch"],
    relevance=VALUE,
    confounds={"S_lang": ["ring_binder"], "S_vis": ["paper_ring", "toy_watch"], "S_unk": ["phone_case"]},
    theta={
        ee("diamond_ring"): 2.0,
        ee("gold_watch"): 2.0,
        **{ee(l): -0.5 for l in ["smartphone", "earbuds"] + DRAWER_OTHER},
        "gripper_tilt": -0.3,
    },
    motivations={
        "store valuables": [ee("diamond_ring"), ee("gold_watch")],
        "The human puts away expensive personal accessories to keep them safe.": [ee("diamond_ring"), ee("gold_watch")],
        "The human tidies small items off the table.": [ee("tape_roll"), ee("diamond_ring")],
    },
    similarities={
        "Is this valuable jewelry?": [ee("diamond_ring"), ee("gold_watch")],
    },
    axes={
        "Is this valuable jewelry?": ["diamond_ring", "gold_watch"],
        "Is this an electronic device?": ["smartphone", "earbuds"],
        "Is this an everyday household item?": DRAWER_OTHER,
    },
    blind={"paper_ring": "diamond_ring", "toy_watch": "gold_watch", "ring_binder": "diamond_ring"},
))

TASKS.append(task(
    "store_drawer_electronics", "store_drawer",
    intent="store electronics",
    generic=GENERIC,
    task_string="Pick items from the table and put them in the drawer.",
    relevant_train=["smartphone", "earbuds"],
    relevance=ELEC,
    confounds={"S_lang": ["phone_case"], "S_vis": ["toy_watch"], "S_unk": ["ring_binder"]},
    theta={
        ee("smartphone"): 2.0,
        ee("earbuds"): 2.0,
        **{ee(l): -0.5 for l in ["diamond_ring", "gold_watch"] + DRAWER_OTHER},
        "gripper_tilt": -0.3,
    },
    motivations={
        "store electronics": [ee("smartphone"), ee("earbuds")],
        "The human protects gadgets from the mess on the table.": [ee("smartphone"), ee("earbuds")],
        "The human tidies small items off the table.": [ee("tape_roll"), ee("earbuds")],
    },
    similarities={
        "Is this an electronic device?": [ee("smartphone"), ee("earbuds")],
    },
    axes={
        "Is this an electronic device?": ["smartphone", "earbuds"],
        "Is this valuable jewelry?": ["diamond_ring", "gold_watch"],
        "Is this an everyday household item?": DRAWER_OTHER,
    },
    blind={"phone_case": "smartphone", "toy_watch": "smartphone", "ring_binder": "tape_roll"},
))


def intent_texts(rng):
    """Text embeddings: the top motivation sits close to the true intent,
    the generic statement far from it."""
    texts = {}
    for spec in TASKS:
        g = unit(rng.standard_normal(TEXT_DIM))
        texts[spec["ground_truth_intent"]] = g
        mot = list(json_motivations(spec))
        texts.setdefault(mot[0], toward(rng, g, 0.9))
        for m in mot[1:]:
            texts.setdefault(m, toward(rng, g, 0.55))
    shared_generic = unit(rng.standard_normal(TEXT_DIM))
    texts[GENERIC] = shared_generic
    # The generic statement is mildly related to every intent.
    for spec in TASKS:
        g = texts[spec["ground_truth_intent"]]
        assert abs(float(g.dot(shared_generic))) < 0.5
    return {"dim": TEXT_DIM, "texts": {k: [round(x, 6) for x in v] for k, v in texts.items()}}


def json_motivations(spec):
    resp = spec["oracle"]["intent_response"]
    start = resp.index("motivations = {")
    end = resp.index("}", start)
    for line in resp[start:end].splitlines()[1:]:
        line = line.strip()
        if line:
            yield eval(line.rstrip(",").split(": [")[0])  # repr'd string literal


def main():
    rng = np.random.default_rng(20240607)
    for name, f in FAMILIES.items():
        for space, views in (("vision", VIEWS), ("language", 1)):
            vectors = build_space(rng, f["train"], f[space], views)
            write_json(
                ROOT / "fixtures" / f"{name}_{space}.json",
                {"space": space, "dim": DIM, "vectors": vectors},
            )
    for spec in TASKS:
        write_json(ROOT / "tasks" / f"{spec['name']}.json", spec)
    write_json(ROOT / "fixtures" / "intent_text_embeddings.json", intent_texts(rng))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Regenerates the bundled task suite under suite/.

Each task gets a world, a buyer script, success criteria and a scripted
planner. Script entries match on substrings of the newest request message,
so one script serves every agent configuration (placeholders on or off,
decision module on or off). Entries are written newest round first so a
later round never falls through to an earlier round's matcher.
"""

import json
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
ROOT = REPO / "suite"
ROBUST = REPO / "crates" / "core" / "tests" / "fixtures" / "robust"

IMG_CRACK = "https://img.shop-cdn.example/u/7731/returns/kettle-base-crack-0412.jpg"
IMG_SHELF = "https://img.shop-cdn.example/u/5120/questions/hallway-shelf-gap.png"
IMG_TOWEL = "https://img.shop-cdn.example/u/9904/complaints/towel-set-received.jpg"
IMG_PARCEL = "https://img.shop-cdn.example/u/3318/complaints/parcel-contents-open.webp"
ORDER_LINK = "https://shop.example.com/order/O1003/detail?from=app_share&ts=1718"
ITEM_LINK = "https://shop.example.com/item/P200?spm=a1z10.3-c.w4002-2185&sku=61"

ASSETS = {
    IMG_CRACK: {
        "annotations": {
            "default": "A white electric kettle on a kitchen counter.",
            "damage": "The kettle base has a visible crack running along its rim.",
            "color": "The kettle is white with a chrome lid.",
        }
    },
    IMG_SHELF: {
        "annotations": {
            "default": "An empty alcove in a hallway with a tape measure.",
            "fit": "The tape measure shows a gap about 62 cm wide.",
        },
        "rules": [{"keywords": ["fit", "width", "wide", "measure"], "category": "fit"}],
    },
    IMG_TOWEL: {
        "annotations": {
            "default": "A folded bath towel set in its packaging.",
            "color": "The towels in the photo are navy blue.",
            "damage": "No visible damage.",
        }
    },
    IMG_PARCEL: {
        "annotations": {
            "default": "An opened parcel with kitchen items.",
            "count": "The parcel holds two items: a ceramic bowl and a spatula. No mug is visible.",
        }
    },
}

PRODUCTS = {
    "P100": {"title": "Stainless Steel Electric Kettle 1.7L", "price": 3999, "stock": 12,
             "attributes": {"color": "white", "capacity": "1.7L"}},
    "P200": {"title": "Bamboo Shoe Rack 3-Tier", "price": 2450, "stock": 4,
             "attributes": {"width": "58 cm", "material": "bamboo"}},
    "P300": {"title": "Cotton Bath Towel Set", "price": 2999, "stock": 30,
             "attributes": {"color": "grey", "pieces": 4}},
    "P400": {"title": "Unscented Laundry Detergent 2L", "price": 1299, "stock": 50,
             "attributes": {"fragrance": "none", "skin": "sensitive"}},
    "P410": {"title": "Lavender Laundry Detergent 2L", "price": 1199, "stock": 40,
             "attributes": {"fragrance": "lavender"}},
    "P500": {"title": "Ceramic Mug", "price": 899, "stock": 25, "attributes": {"color": "cream"}},
    "P510": {"title": "Ceramic Bowl", "price": 1099, "stock": 25, "attributes": {"color": "cream"}},
    "P520": {"title": "Silicone Spatula", "price": 499, "stock": 60, "attributes": {"color": "red"}},
}

POLICIES = {
    "refund-timeline": {"text": "Approved refunds are returned to the original payment method within 3 business days."},
    "cancellation": {"text": "Orders can be cancelled before delivery. Delivered orders need a refund request instead."},
    "towel-promo": {"namespace": "store_promotion",
                    "text": "Towel week: 10% off all bath towels with code TOWEL10."},
    "late-delivery-coupon": {"namespace": "store_promotion",
                             "text": "Late delivery apology coupon: $5 off the next order with code SORRY5."},
}


def world(products, orders=None, shipments=None, policies=None, clock=0):
    return {
        "products": {p: PRODUCTS[p] for p in products},
        "orders": orders or {},
        "shipments": shipments or {},
        "policies": {k: POLICIES[k] for k in (policies or [])},
        "buyers": {},
        "clock": clock,
    }


def order(buyer, items, status, address="18 Linden Road"):
    return {"buyer_id": buyer, "items": [{"product_id": p, "quantity": q} for p, q in items],
            "status": status, "address": address}


def step(tool, **arguments):
    return {"tool": tool, "arguments": arguments}


def tool_plan(rationale, *steps):
    kind = "single_tool" if len(steps) == 1 else "tool_sequence"
    return {"kind": kind, "steps": list(steps), "rationale": rationale}


def reply_plan(rationale, text):
    return {"kind": "direct_reply", "draft_reply": text, "rationale": rationale}


def fenced(plans):
    return "```json\n" + json.dumps({"plans": plans}, indent=1) + "\n```"


def script(rounds):
    """rounds: list of (match, plans, probs) in chronological order."""
    entries = []
    for match, plans, probs in reversed(rounds):
        labels = [chr(ord("A") + i) for i in range(len(plans))]
        entries.append({
            "contains": plans[0]["rationale"],
            "response": {"text": labels[probs.index(max(probs))],
                         "label_probs": dict(zip(labels, probs))},
        })
    for match, plans, probs in reversed(rounds):
        entries.append({"contains": match, "response": {"text": fenced(plans)}})
    return {"entries": entries}


def fact(s, must=True):
    f = {"match": {"substring": s}}
    if not must:
        f["must_appear"] = False
    return f


def number(v, tol=0.005):
    return {"match": {"numeric": {"value": v, "tolerance": tol}}}


def state(path, expected):
    return {"path": path, "expected": expected}


TASKS = []
ROBUST_TASKS = []


def task(task_id, category, modality, w, turns, success, rounds, max_turns=None, into=TASKS):
    into.append((task_id, {
        "task_id": task_id,
        "category": category,
        "modality": modality,
        "world_seed": w,
        "buyer_script": [{"utterance": t} for t in turns],
        "success": success,
        "max_turns": max_turns or len(turns) + 1,
        "script": f"../scripts/{task_id}.json",
    }, script(rounds)))


# pre-sales ---------------------------------------------------------------

task(
    "pre-stock-price", "pre_sales", "unimodal",
    world(["P100", "P300"]),
    ["Hi, is the stainless steel kettle P100 in stock? And what does it cost?"],
    {"response_facts": [fact("in stock"), number(39.99)]},
    [
        ("kettle P100 in stock",
         [tool_plan("Look up P100 to confirm stock and price.", step("product_info", product_id="P100")),
          reply_plan("Answer from general knowledge.", "Most kettles are in stock, please check the page.")],
         [0.85, 0.15]),
        ("tool[product_info]:",
         [reply_plan("Report stock and price from the product record.",
                     "Yes, the Stainless Steel Electric Kettle 1.7L is in stock (12 left) and costs $39.99.")],
         [1.0]),
    ],
)

task(
    "pre-product-link", "pre_sales", "unimodal",
    world(["P200", "P100"]),
    [f"How wide is this shoe rack? {ITEM_LINK}"],
    {"response_facts": [fact("58 cm"), number(24.50)]},
    [
        ("How wide is this shoe rack",
         [tool_plan("Open the linked product to read its width.", step("product_info", product_id="[Product 1]")),
          tool_plan("Search the catalogue for shoe racks.", step("memory_search", namespace="product", query="shoe rack"))],
         [0.8, 0.2]),
        ("tool[product_info]:",
         [reply_plan("Quote the width and price from the product record.",
                     "The Bamboo Shoe Rack 3-Tier is 58 cm wide and costs $24.50.")],
         [1.0]),
    ],
)

task(
    "pre-promotion", "pre_sales", "unimodal",
    world(["P300"], policies=["towel-promo", "refund-timeline"]),
    ["Are there any discounts on bath towels right now?"],
    {"response_facts": [fact("TOWEL10"), fact("10%")]},
    [
        ("discounts on bath towels",
         [tool_plan("Search store promotions for towels.",
                    step("memory_search", namespace="store_promotion", query="towel discount")),
          reply_plan("Say there are no promotions.", "There are no promotions at the moment.")],
         [0.9, 0.1]),
        ("tool[memory_search]:",
         [reply_plan("Share the towel promotion code.",
                     "Yes! It's towel week: 10% off all bath towels with code TOWEL10.")],
         [1.0]),
    ],
)

task(
    "pre-shelf-fit", "pre_sales", "multimodal",
    world(["P200"]),
    [f"Would the shoe rack P200 fit in this gap? {IMG_SHELF}"],
    {"response_facts": [fact("62 cm"), fact("58 cm"), fact("will fit")]},
    [
        ("fit in this gap",
         [tool_plan("Measure the gap in the photo, then read the rack width.",
                    step("multimodal_describe", placeholder="[Image 1]", instruction="How wide is the gap? Read the tape measure."),
                    step("product_info", product_id="P200"))],
         [1.0]),
        ("tool[product_info]:",
         [reply_plan("Compare gap width with rack width.",
                     "The gap in your photo is about 62 cm and the Bamboo Shoe Rack 3-Tier is 58 cm wide, so it will fit.")],
         [1.0]),
    ],
)

task(
    "pre-remember-preference", "pre_sales", "unimodal",
    world(["P400", "P410"]),
    ["Please note that I only buy fragrance-free products, my skin is sensitive.",
     "Which laundry detergent would you recommend for me?"],
    {"response_facts": [fact("Unscented Laundry Detergent"), fact("Lavender", must=False)]},
    [
        ("fragrance-free products",
         [tool_plan("Store the buyer's fragrance preference.",
                    step("memory_write", namespace="buyer_profile", key="B77",
                         value="Buys fragrance-free products only; sensitive skin."))],
         [1.0]),
        ("tool[memory_write]:",
         [reply_plan("Confirm the preference was saved.",
                     "Noted, I'll keep your preference for fragrance-free products in mind.")],
         [1.0]),
        ("Which laundry detergent",
         [tool_plan("Recall the stored preference, then search detergents.",
                    step("memory_recall", namespace="buyer_profile", key="B77"),
                    step("product_info", query="unscented detergent sensitive")),
          reply_plan("Recommend the best seller.", "I'd recommend our Lavender Laundry Detergent 2L.")],
         [0.7, 0.3]),
        ("tool[product_info]:",
         [reply_plan("Recommend the unscented detergent.",
                     "I'd recommend the Unscented Laundry Detergent 2L ($12.99); it has no added fragrance.")],
         [1.0]),
    ],
)

# after-sales -------------------------------------------------------------

task(
    "after-tracking", "after_sales", "unimodal",
    world(["P100"], orders={"O1001": order("B10", [("P100", 1)], "shipped")},
          shipments={"O1001": [
              {"tick": 2, "location": "Regional sorting center", "status": "in_transit"},
              {"tick": 1, "location": "Warehouse", "status": "picked"},
              {"tick": 3, "location": "Eastside delivery station", "status": "out_for_delivery"}]}),
    ["Where is my order O1001?"],
    {"response_facts": [fact("out for delivery"), fact("Eastside delivery station")]},
    [
        ("Where is my order O1001",
         [tool_plan("Track the shipment for O1001.", step("logistics_track", order_id="O1001")),
          tool_plan("Look up the order record.", step("order_lookup", order_id="O1001"))],
         [0.75, 0.25]),
        ("tool[logistics_track]:",
         [reply_plan("Report the latest shipment event.",
                     "Your order O1001 is out for delivery from the Eastside delivery station.")],
         [1.0]),
    ],
)

task(
    "after-cancel", "after_sales", "unimodal",
    world(["P300"], orders={"O1002": order("B11", [("P300", 2)], "paid")}, policies=["cancellation"]),
    ["I changed my mind, please cancel order O1002."],
    {"state_assertions": [state("orders.O1002.status", "cancelled")],
     "response_facts": [fact("cancelled")]},
    [
        # The first proposal claims success without acting; the evaluator prefers the real cancellation.
        ("please cancel order O1002",
         [reply_plan("Reassure the buyer right away.", "No problem, your order O1002 has been cancelled."),
          tool_plan("Check the order, then cancel it.",
                    step("order_lookup", order_id="O1002"),
                    step("order_update", order_id="O1002", action="cancel"))],
         [0.2, 0.8]),
        ("tool[order_update]:",
         [reply_plan("Confirm the cancellation.", "Done: order O1002 is now cancelled and you will not be charged.")],
         [1.0]),
    ],
)

task(
    "after-damaged-refund", "after_sales", "multimodal",
    world(["P100"], orders={"O1003": order("B12", [("P100", 1)], "delivered")}, policies=["refund-timeline"]),
    [f"My kettle arrived broken, see {IMG_CRACK} . Order: {ORDER_LINK}",
     "Thanks. When will I get my money back?"],
    {"state_assertions": [state("orders.O1003.status", "refund_requested")],
     "response_facts": [fact("crack"), fact("within 3 business days")]},
    [
        ("arrived broken",
         [tool_plan("Inspect the photo for damage, then open a refund request.",
                    step("multimodal_describe", placeholder="[Image 1]", instruction="Is the item damaged?"),
                    step("order_update", order_id="[Order 1]", action="request_refund")),
          reply_plan("Ask for more details first.", "Could you describe the damage in more detail?")],
         [0.9, 0.1]),
        ("tool[order_update]:",
         [reply_plan("Confirm damage and refund request.",
                     "I can see the crack in the kettle base. I've opened a refund request for [Order 1].")],
         [1.0]),
        ("When will I get my money back",
         [tool_plan("Look up the refund timeline policy.",
                    step("memory_search", namespace="platform_policy", query="refund timeline"))],
         [1.0]),
        ("tool[memory_search]:",
         [reply_plan("Quote the refund timeline.",
                     "Once approved, the refund goes back to your original payment method within 3 business days.")],
         [1.0]),
    ],
)

task(
    "after-cancel-delivered", "after_sales", "unimodal",
    world(["P500"], orders={"O1004": order("B13", [("P500", 1)], "delivered")}, policies=["cancellation"]),
    ["Cancel order O1004 please, I don't need the mug anymore."],
    {"state_assertions": [state("orders.O1004.status", "delivered")],
     "response_facts": [fact("already delivered"), fact("refund")]},
    [
        ("Cancel order O1004",
         [tool_plan("Try to cancel O1004.", step("order_update", order_id="O1004", action="cancel"))],
         [1.0]),
        ("illegal_transition",
         [reply_plan("Explain the order cannot be cancelled and offer a refund.",
                     "Order O1004 was already delivered, so it can't be cancelled, but I can help you request a refund instead.")],
         [1.0]),
    ],
)

# complaints --------------------------------------------------------------

task(
    "complaint-wrong-color", "complaint", "multimodal",
    world(["P300"], orders={"O1005": order("B14", [("P300", 1)], "delivered")}),
    [f"You sent the wrong color! Order O1005, here's what I got: {IMG_TOWEL}"],
    {"response_facts": [fact("navy blue"), fact("grey"), fact("replacement")]},
    [
        # The first proposal apologises without checking; the evaluator prefers verifying.
        ("You sent the wrong color",
         [reply_plan("Apologise immediately.", "So sorry about that! We'll look into it."),
          tool_plan("Check the photo's color and the ordered variant.",
                    step("multimodal_describe", placeholder="[Image 1]", instruction="What color are the towels?"),
                    step("order_lookup", order_id="O1005"))],
         [0.3, 0.7]),
        ("tool[order_lookup]:",
         [reply_plan("Confirm the mismatch and offer a replacement.",
                     "You're right: the towels in your photo are navy blue, but you ordered the grey set. "
                     "I'll arrange a free replacement.")],
         [1.0]),
    ],
)

task(
    "complaint-late-delivery", "complaint", "unimodal",
    world(["P410"], orders={"O1006": order("B15", [("P410", 2)], "shipped")},
          shipments={"O1006": [{"tick": 1, "location": "Warehouse", "status": "picked"},
                               {"tick": 4, "location": "Northgate hub", "status": "delayed"}]},
          policies=["late-delivery-coupon"]),
    ["This is ridiculous, order O1006 should have arrived days ago!"],
    {"response_facts": [fact("Northgate hub"), fact("SORRY5")]},
    [
        ("should have arrived days ago",
         [tool_plan("Track the parcel and find an apology coupon.",
                    step("logistics_track", order_id="O1006"),
                    step("memory_search", namespace="store_promotion", query="late delivery apology coupon"))],
         [1.0]),
        ("tool[memory_search]:",
         [reply_plan("Apologise with tracking status and coupon.",
                     "I'm sorry for the delay. Your parcel is held up at the Northgate hub. "
                     "Please accept $5 off your next order with code SORRY5.")],
         [1.0]),
    ],
)

task(
    "complaint-missing-item", "complaint", "multimodal",
    world(["P500", "P510", "P520"], orders={"O1007": order("B16", [("P500", 1), ("P510", 1), ("P520", 1)], "delivered")}),
    [f"My parcel for order O1007 is missing something: {IMG_PARCEL}"],
    {"response_facts": [fact("Ceramic Mug"), fact("ship")]},
    [
        ("is missing something",
         [tool_plan("Count the items in the photo and compare with the order.",
                    step("multimodal_describe", placeholder="[Image 1]", instruction="How many items are in the parcel?"),
                    step("order_lookup", order_id="O1007"))],
         [1.0]),
        ("tool[order_lookup]:",
         [reply_plan("Name the missing item and promise to ship it.",
                     "Your photo shows the bowl and spatula, so the Ceramic Mug is missing. We'll ship it to you today.")],
         [1.0]),
    ],
)


# robustness fixtures: each task trips one error path ----------------------

task(
    "fault-unknown-tool", "after_sales", "unimodal",
    world(["P100"], orders={"O2001": order("B20", [("P100", 1)], "paid")}),
    ["Can I get a refund for O2001?"],
    {"response_facts": [fact("refund")]},
    [
        ("refund for O2001",
         [tool_plan("Use a tool that does not exist.", step("refund_everything", order_id="O2001"))], [1.0]),
        ("unknown_tool",
         [reply_plan("Recover with a reply.", "Your order O2001 has not shipped yet, so you can cancel it for a full refund.")],
         [1.0]),
    ],
    into=ROBUST_TASKS,
)

task(
    "fault-invalid-arguments", "after_sales", "unimodal",
    world(["P100"], orders={"O2002": order("B21", [("P100", 1)], "paid")}),
    ["What's the status of O2002?"],
    {"response_facts": [fact("paid")]},
    [
        ("status of O2002",
         [tool_plan("Look up the order without its id.", step("order_lookup", id="O2002"))], [1.0]),
        ("invalid_arguments",
         [tool_plan("Retry with the right argument.", step("order_lookup", order_id="O2002"))], [1.0]),
        ("tool[order_lookup]: {",
         [reply_plan("Report the status.", "Order O2002 is paid and waiting to ship.")], [1.0]),
    ],
    into=ROBUST_TASKS,
)

task(
    "fault-illegal-transition", "after_sales", "unimodal",
    world(["P500"], orders={"O2003": order("B22", [("P500", 1)], "created")}),
    ["Please refund order O2003."],
    {"state_assertions": [state("orders.O2003.status", "created")], "response_facts": [fact("not been paid")]},
    [
        ("refund order O2003",
         [tool_plan("Refund straight away.", step("order_update", order_id="O2003", action="refund"))], [1.0]),
        ("illegal_transition",
         [reply_plan("Explain why no refund is possible.", "Order O2003 has not been paid yet, so there is nothing to refund.")],
         [1.0]),
    ],
    into=ROBUST_TASKS,
)

task(
    "fault-unknown-placeholder", "complaint", "multimodal",
    world(["P100"], orders={"O2004": order("B23", [("P100", 1)], "delivered")}),
    [f"Is my kettle damaged? {IMG_CRACK}"],
    {"response_facts": [fact("crack")]},
    [
        ("kettle damaged",
         [tool_plan("Describe an image that was never sent.",
                    step("multimodal_describe", placeholder="[Image 9]", instruction="Is it damaged?"))], [1.0]),
        ("unknown_placeholder",
         [reply_plan("Reply mentioning a placeholder that does not exist.", "I checked [Image 9] and it looks fine.")],
         [1.0]),
        ("unknown placeholder(s) [Image 9]",
         [tool_plan("Describe the photo that was actually sent.",
                    step("multimodal_describe", placeholder="[Image 1]", instruction="Is it damaged?"))], [1.0]),
        ("tool[multimodal_describe]: [Image 1]",
         [reply_plan("Report the damage.", "Yes, I can see a crack along the kettle base.")], [1.0]),
    ],
    into=ROBUST_TASKS,
)

task(
    "fault-script-exhausted", "pre_sales", "unimodal",
    world(["P100"]),
    ["How much is the kettle P100?", "And do you ship abroad?"],
    {"response_facts": [fact("39.99")]},
    [
        ("How much is the kettle",
         [reply_plan("Quote the price.", "The kettle P100 costs $39.99.")], [1.0]),
    ],
    into=ROBUST_TASKS,
)


def write_suite(root, name, tasks):
    (root / "tasks").mkdir(parents=True, exist_ok=True)
    (root / "scripts").mkdir(parents=True, exist_ok=True)
    for task_id, body, plan_script in tasks:
        (root / "tasks" / f"{task_id}.json").write_text(json.dumps(body, indent=2) + "\n")
        (root / "scripts" / f"{task_id}.json").write_text(json.dumps(plan_script, indent=2) + "\n")
    (root / "assets.json").write_text(json.dumps(ASSETS, indent=2) + "\n")
    suite = {"name": name, "assets": "assets.json",
             "tasks": [f"tasks/{task_id}.json" for task_id, _, _ in tasks]}
    (root / "suite.json").write_text(json.dumps(suite, indent=2) + "\n")


SIMULATED = {"mode": "simulated", "ms_per_prompt_char": 0.05, "ms_per_call": 250.0}

# config matrices for `shopdesk ablate --matrix` ---------------------------
ABLATIONS = {
    "aci": [
        {"name": "aci-on", "agent": {"aci": True, "latency": SIMULATED}},
        {"name": "aci-off", "agent": {"aci": False, "latency": SIMULATED}},
    ],
    "decision": [
        {"name": "decision-on", "agent": {"decision_module": True}},
        {"name": "decision-off", "agent": {"decision_module": False}},
    ],
    "strategy": [
        {"name": "mllm-as-tool", "agent": {"strategy": "tool"}},
        {"name": "mllm-as-planner", "agent": {"strategy": "planner"}},
    ],
}


def write_extras(root):
    (root / "ablations").mkdir(parents=True, exist_ok=True)
    for name, configs in ABLATIONS.items():
        (root / "ablations" / f"{name}.json").write_text(json.dumps({"configs": configs}, indent=2) + "\n")
    # buyer lines for `shopdesk chat after-damaged-refund --suite suite/suite.json --scripted`
    demo = next(body for task_id, body, _ in TASKS if task_id == "after-damaged-refund")
    lines = [turn["utterance"] for turn in demo["buyer_script"]] + ["/trace"]
    (root / "demo").mkdir(parents=True, exist_ok=True)
    (root / "demo" / "after-damaged-refund.txt").write_text("\n".join(lines) + "\n")


def main():
    write_suite(ROOT, "storefront", TASKS)
    write_suite(ROBUST, "faults", ROBUST_TASKS)
    write_extras(ROOT)


if __name__ == "__main__":
    main()

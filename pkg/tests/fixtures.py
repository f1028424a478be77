"""Shared test data."""

# a well-formed relabeler answer in the expected JSON schema
EXAMPLE_ANSWER = """{
  "Analysis": "Chopped tree first, then set up crafting table, finally make wood pickaxe.",
  "Completed Instructions": {
    "Mid-Level": [
      "collect wood from tree",
      "place crafting table",
      "make a wood pickaxe",
      "sleep and wake up"
    ],
    "High-Level": [
      "Prepare to collect stone",
      "collect tools to mine stone and coal",
      "prepare all tools to collect stone, then make stone pickaxe"
    ]
  }
}"""
EXAMPLE_MID = ["collect wood from tree", "place crafting table", "make a wood pickaxe", "sleep and wake up"]

"""Three ways to turn a record into text, and why the template form reads best.

Run: python demos/01_serialization.py
"""

from gemprompt import parse_entity, serialize_ditto, serialize_natural
from gemprompt.serialize import builtin_templates, parse_filled

record = parse_entity({"id": "g1", "content": {"title": "ipod nano 8gb", "manufacturer": "apple",
                                                "price": "$149"}})
nested = parse_entity({"id": "p1", "content": {"title": "prompt tuning for matching",
                                                "pubinfo": {"venue": "vldb", "year": "2024"},
                                                "authors": ["a. smith", "b. jones"]}})
text = parse_entity({"id": "t1", "content": "Apple iPod nano 8GB silver, fifth generation"})

print("Ditto-style markup keeps the schema visible but is unnatural for a masked LM:")
print("  ", serialize_ditto(record))
print("  ", serialize_ditto(nested))

print("\nThe basic clause rule reads 'the key is value' and recurses into nested values:")
print("  ", serialize_natural(record))
print("  ", serialize_natural(nested))
print("Textual entities pass through untouched:")
print("  ", serialize_natural(text))

templates = builtin_templates()
ga = templates["google_amazon"]
print("\nA hand-written template for product records:")
print("  ", ga.pattern)
filled = serialize_natural(record, ga)
print("  ", filled)
print("Missing slots become the pad marker instead of leaking '{...}':")
print("  ", serialize_natural(parse_entity({"title": "zune"}, entity_id="z"), ga))

print("\nFilled templates parse back into their slot values:")
print("  ", parse_filled(filled, ga))

print("\nThe mined paraphrase of the same template (used as an alternative prompt):")
print("  ", templates["google_amazon_paraphrased"].pattern)

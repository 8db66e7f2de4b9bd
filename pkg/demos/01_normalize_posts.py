"""Normalizing social-media posts.

Every post goes through the same fixed pipeline: drop a leading retweet
marker, replace URLs and @mentions with placeholders, spell emoji out as
words, collapse whitespace and cap the length. The result is deterministic
and idempotent, so normalizing twice changes nothing.
"""

from phsbench import NormalizationConfig, RawPost, normalize, normalize_corpus
from phsbench.synthetic import synthetic_posts

posts = [
    RawPost("1", "RT @cdcgov: Flu season is here 💉 get your shot https://t.co/abc123"),
    RawPost("2", "@drsmith   my   migraine is back again 😢😢"),
    RawPost("3", "so stressed about exams... can't sleep 😴 #finals", platform="reddit"),
    RawPost("4", "Reminder: your appointment is tomorrow at 9am", platform="sms"),
]

print("One post at a time")
for post in posts:
    out = normalize(post)
    print(f"  {post.text!r}\n    -> {out.text!r}  {sorted(out.transforms_applied)}")

# Idempotence: the normalized text is a fixed point.
again = normalize(RawPost("1", normalize(posts[0]).text))
assert again.text == normalize(posts[0]).text and not again.transforms_applied

# Shorter limits are a config knob. Truncation never cuts a placeholder in half.
short = normalize(posts[0], NormalizationConfig(char_limit=40))
print(f"\nWith a 40-character limit: {short.text!r}")

# A whole corpus, with counts of which rules fired.
normalized, stats = normalize_corpus(synthetic_posts(1000, seed=1))
print("\nCorpus of 1000 synthetic posts")
for key, value in stats.to_dict().items():
    print(f"  {key:>16}: {value:.1f}" if isinstance(value, float) else f"  {key:>16}: {value}")

import re

_TOKEN = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    """
    a an the and or but of in on at to for from with by as is are was were be been
    being it its this that these those there here he she they them his her their
    we you i me my our your some any each into onto over under up down out off
    near next while who whom which what when where how than then so very can
    will just not no has have had do does did about above below between
    """.split()
)


def tokenize(text):
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


def content_tokens(text):
    return [t for t in tokenize(text) if t not in STOPWORDS]

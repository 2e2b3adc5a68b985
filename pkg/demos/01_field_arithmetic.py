# coding: utf-8

# # P-256 field arithmetic in fixed words
#
# Elements are four 64-bit words (or eight 32-bit ones). Multiplication goes
# through two Montgomery products, and every primitive runs the same word-level
# steps whatever the operand values are.

# In[1]:

import random

from atomsca.fieldarith import FieldParams, field_add, field_mul, field_neg, mont_mul

F = FieldParams.p256()
print("words:", F.s, "of", F.w, "bits")
print("R mod p =", hex(F.R_mod_p))


# In[2]:

# A standard-domain product is X (a*b*R^-1) followed by X' (times R^2 * R^-1).

a, b = F.element(2**200 + 12345), F.element(3**150)
seen = []
c = field_mul(a, b, F, hook=lambda op, v: seen.append(op))
print(seen)
assert int(c) == int(a) * int(b) % F.p


# In[3]:

# The step log records the kind of each word-level step; it never depends on the data.

rnd = random.Random(0)
shapes = set()
for _ in range(50):
    x, y = F.element(rnd.randrange(F.p)), F.element(rnd.randrange(F.p))
    steps = []
    mont_mul(x, y, F, steps)
    shapes.add(tuple(steps))
print("distinct mont_mul step sequences over 50 inputs:", len(shapes))


# In[4]:

for name, fn in (("add", lambda s: field_add(a, b, F, s)), ("neg", lambda s: field_neg(a, F, s))):
    s1, s2 = [], []
    fn(s1)
    (field_add(F.zero, F.zero, F, s2) if name == "add" else field_neg(F.zero, F, s2))
    print(name, "steps:", len(s1), "same for zero operands:", s1 == s2)


# In[5]:

# 32-bit words give the same residues.

F32 = FieldParams.p256(32)
c32 = field_mul(F32.element(int(a)), F32.element(int(b)), F32)
print("w=32 agrees:", int(c32) == int(c))

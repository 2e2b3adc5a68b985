# coding: utf-8

# # Atomic patterns
#
# A point operation is written as a list of identical blocks. Each MNAMNAA
# block runs multiply, negate, add, multiply, negate, add, add; slots with no
# useful work become dummy operations on the scratch register T0.

# In[1]:

from atomsca import atomicpat as ap
from atomsca.fieldarith import FieldParams
from atomsca.scalarmul import AffinePoint, affine_add

F = FieldParams.p256()
dbl = ap.pattern_doubling_mnamnaa()
print(dbl.name, "blocks:", len(dbl), "shape:", dbl.pattern_string)
print(ap.dumps_pattern(dbl))


# In[2]:

# Run the doubling on G in Jacobian form (Z = 1) and compare with affine 2G.

G = AffinePoint.generator(F)
out = ap.run_pattern(dbl, F, X1=G.x, Y1=G.y, Z1=1)
z = pow(out["Z3"], -1, F.p)
two_g = affine_add(G, G, F)
print("doubling matches:", (out["X3"] * z * z % F.p, out["Y3"] * z**3 % F.p) == (two_g.x, two_g.y))


# In[3]:

# Every block emits the same opcode string, X' being the second Montgomery product.

events = []
ap.run_pattern(dbl, F, events, X1=G.x, Y1=G.y, Z1=1)
for b in range(len(dbl)):
    print(b + 1, ap.opcode_string(events, b))


# In[4]:

# The uncorrected tables carry four register mistakes and give the wrong point.

bad = ap.run_pattern(ap.pattern_doubling_original(), F, X1=G.x, Y1=G.y, Z1=1)
print("uncorrected doubling equals the corrected one:", bad == out)


# In[5]:

# The MANA variants use a shorter block; the opcode string is X X' A N A.

mana = ap.pattern_mixed_add_mana()
events = []
Q = affine_add(two_g, G, F)
ap.run_pattern(mana, F, events, X1=two_g.x, Y1=two_g.y, Z1=1, X2=G.x, Y2=G.y)
print(mana.name, len(mana), "blocks, first:", ap.opcode_string(events, 0))

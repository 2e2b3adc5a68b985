# coding: utf-8

# # Left-to-right kP with atomic patterns
#
# Each key bit costs a doubling, and a one bit adds a mixed addition. NOP runs
# between blocks and between operations leave quiet gaps in a power trace.

# In[1]:

from collections import Counter

from atomsca.fieldarith import FieldParams
from atomsca.scalarmul import (AffinePoint, KPEventLog, Scalar, jacobian_to_affine, kp_atomic,
                               kp_reference)

F = FieldParams.p256()
G = AffinePoint.generator(F)
k = Scalar.from_binary("1001101101011111110111")


# In[2]:

log = KPEventLog()
Q = jacobian_to_affine(kp_atomic(k, G, F, log), F)
print("kP =", Q.to_hex()[:32], "...")
print("matches the affine reference:", Q == kp_reference(k, G, F))


# In[3]:

kinds = log.kinds()
print(Counter(kinds))
print("".join(kind[0] for kind in kinds))


# In[4]:

print(Counter((n.position, n.count) for n in log.nop_runs()))


# In[5]:

# The operation sequence gives the key straight back, which is what a trace
# that shows doublings apart from additions would leak.

print(log.reconstruct_scalar().binary() == k.binary())

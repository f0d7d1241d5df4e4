"""Random instance generators shared by the unit and acceptance tests."""
from cyldisc.green import KilledDomain
from cyldisc.lattice import CylinderGeom, slab_members


def random_domain(rng, d=2, N=5, a=3, keep=0.8):
    g = CylinderGeom(d, N)
    S = sorted(slab_members(g, a))
    sites = {x for x in S if rng.random() < keep}
    if not sites:
        sites = {S[0]}
    return KilledDomain(g, sites, a)


def random_points(rng, domain, k):
    order = sorted(domain.sites)
    idx = rng.choice(len(order), size=k, replace=True)
    return [order[i] for i in idx]

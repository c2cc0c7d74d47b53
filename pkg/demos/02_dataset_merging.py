"""
Group-balanced merging and real/synthetic mixing
================================================

Merging works on manifests, not feature payloads. Identities are scored by
the argmax mass of their mean soft label, each group keeps its top-scoring
identities up to an equal quota, and anything a group cannot fill is
recorded as a shortfall instead of being handed to another group.
"""

from fairkd.sampling import balanced_merge, manifest_stats, mix_merge
from fairkd.synthdata import UniverseConfig, generate_universe

bundle = generate_universe(UniverseConfig(n_groups=4, identities_per_source=40,
                                          eval_identities=8, seed=11))


def show(manifest):
    stats = manifest_stats(manifest)
    for g in range(manifest.group_count):
        cells = stats["groups"][str(g)]
        print(f"  group{g}: real {cells['real']['identities']:2d} ids / "
              f"{cells['real']['images']:3d} images, synthetic "
              f"{cells['synthetic']['identities']:2d} ids / "
              f"{cells['synthetic']['images']:3d} images")
    print(f"  total {stats['total_identities']} identities, real fraction "
          f"{stats['real_identity_fraction']:.3f}, shortfalls {stats['shortfalls']}")


# Balanced merge over both pools: 30 seats spread 8/8/7/7, filled by the
# most group-representative identities regardless of source.
merged = balanced_merge([bundle.real, bundle.synthetic], total_identities=30,
                        name="balanced-30")
print("balanced_merge of real+synthetic at 30 identities")
show(merged)

# Ask for more than a group can supply and the gap shows up as a shortfall;
# quotas of other groups are untouched, so the imbalance is visible, not
# silently papered over.
starved = balanced_merge([bundle.holdout], total_identities=16, name="starved")
print("\nbalanced_merge of the 8-identity holdout pool at 16 identities")
show(starved)

# Mixing targets a real-identity fraction. Integer seats make the request
# exact only to 1/total; the largest-remainder split keeps every group as
# close to the target as integers allow.
for total in (10, 20, 30):
    mixed = mix_merge([bundle.real], [bundle.synthetic], real_fraction=0.7,
                      total_identities=total, name=f"mix-{total}")
    frac = manifest_stats(mixed)["real_identity_fraction"]
    print(f"\nmix_merge total {total:2d}: real fraction {frac:.3f} "
          f"(requested 0.700, worst case off by {1 / total:.3f})")
show(mixed)

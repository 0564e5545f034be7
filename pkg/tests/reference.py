"""Independent brute-force references used by unit and acceptance tests.

These deliberately re-derive behaviour from first principles (explicit
loops over the same published policies) rather than calling the scheduler
under test.
"""

import random
from datetime import datetime, timedelta, timezone

from minigrid import classad

BASE = datetime(2013, 2, 5, 9, 0, 0, tzinfo=timezone.utc)


def at(seconds: float) -> datetime:
    return BASE + timedelta(seconds=seconds)


def brute_force_schedule(jobs, slots):
    """Reference scheduler: jobs and slots are plain dicts.

    jobs: {id, priority, submitted, requirements, owner, cmd}
    slots: {name, state, memory, arch, opsys}
    Returns [(job id, slot name)] with the same policy the queue documents:
    priority desc, submitted asc, id asc; best slot = requirement-satisfying
    unclaimed slot with smallest name (no rank expressions here).
    """
    free = {s["name"]: s for s in slots if s["state"] == "Unclaimed"}
    ordered = sorted(jobs, key=lambda j: (-j["priority"], j["submitted"], j["id"]))
    out = []
    for job in ordered:
        job_ad = classad.job_ad(owner=job.get("owner", "u"), cmd=job.get("cmd", "x"),
                                requirements=job.get("requirements") or True)
        candidates = []
        for name, slot in free.items():
            machine = classad.machine_ad(name, state="Unclaimed",
                                         memory=slot["memory"], arch=slot["arch"],
                                         opsys=slot.get("opsys", "LINUX"))
            req = job_ad.get("Requirements")
            holds = classad.eval_expr(req, job_ad, machine) if not isinstance(req, bool) else req
            if holds is True:
                candidates.append(name)
        if not candidates:
            continue
        chosen = min(candidates)
        del free[chosen]
        out.append((job["id"], chosen))
    return out


def random_scheduler_instance(rng: random.Random):
    """A random ≤6 jobs / ≤6 slots instance over Memory/Arch requirements."""
    arches = ["INTEL", "X86_64"]
    slots = []
    for i in range(rng.randint(0, 6)):
        slots.append({
            "name": f"slot{i + 1}@h",
            "state": rng.choice(["Unclaimed"] * 3 + ["Claimed"]),
            "memory": rng.choice([256, 1001, 2048, 4096]),
            "arch": rng.choice(arches),
            "opsys": "LINUX",
        })
    jobs = []
    for i in range(rng.randint(0, 6)):
        requirements = rng.choice([
            None,
            f"TARGET.Memory >= {rng.choice([100, 1001, 2000, 5000])}",
            f'TARGET.Arch == "{rng.choice(arches)}"',
            f"TARGET.Memory >= {rng.choice([512, 3000])} && "
            f'TARGET.Arch == "{rng.choice(arches)}"',
        ])
        jobs.append({
            "id": i,
            "priority": rng.randint(0, 2),
            "submitted": rng.randint(0, 3),
            "requirements": requirements,
        })
    return jobs, slots

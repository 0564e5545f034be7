"""Built-in scenario scripts and the submit files they exercise.

A scenario is a line-oriented script: ``at <t> <user>@<site> <cli
command...>`` runs a command at virtual time ``t`` (seconds from testbed
start), and ``expect <substring>`` asserts on the previous command's
output.  The registry below replays the full walk-throughs end to end:
a local vanilla round trip, a synchronous remote run with a fresh proxy,
and a grid-universe submission watched through its queue states until the
entry disappears.
"""

MYJOB_SUB = """\
Universe = Vanilla
Executable = /bin/hostname
Output = result.out
Error = result.err
Log = result.log
Queue
"""

CONDORTEST_SUBMIT = """\
Universe = Globus
grid_resource = gt5 grid-v.it2.ddu.ac.in/jobmanager-condor
Executable = /bin/hostname
Arguments = -f
Output = result.output
Error = result.error
Log = result.log
Queue
"""

LOCAL_SUBMIT = """\
# Local vanilla round trip on a fresh 2-slot site.
at 0 grid-b@grid-b mg-status
at 0 grid-b@grid-b mg-submit myjob.sub
expect 1 job(s) submitted to cluster 1.
at 0.2 grid-b@grid-b mg-q
expect 1 idle
at 12 grid-b@grid-b mg-q
expect 0 jobs
at 12 grid-b@grid-b mg-history
expect C
at 12 grid-b@grid-b mg-status
expect Unclaimed
"""

GLOBUS_JOB_RUN = """\
# Create a proxy on grid-b, then run /bin/date synchronously on ca.
at 0 gtuser@grid-b mg-proxy-init -debug -verify
expect Proxy Verify OK
at 0 gtuser@grid-b mg-proxy-info
expect 12:00:00
at 1 gtuser@grid-b mg-job-run ca.it2.ddu.ac.in/jobmanager-condor /bin/date
at 20 ca@ca mg-history
expect /bin/date
"""

GRID_UNIVERSE = """\
# Grid-universe submission from grid-b to grid-v, sampled every 2 seconds.
at 0 gtuser@grid-b mg-proxy-init
at 0 gtuser@grid-b mg-submit condortest.submit
expect job(s) submitted to cluster
at 0.2 gtuser@grid-b mg-q
at 2 gtuser@grid-b mg-q
at 4 gtuser@grid-b mg-q
at 6 gtuser@grid-b mg-q
at 8 gtuser@grid-b mg-q
at 10 gtuser@grid-b mg-q
at 12 gtuser@grid-b mg-q
at 14 gtuser@grid-b mg-q
expect 0 jobs
"""

FIG5_CLUSTER_13 = """\
# Twelve warm-up submissions, then the thirteenth lands on cluster 13.
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 0 grid-b@grid-b mg-submit myjob.sub
at 1 grid-b@grid-b mg-submit myjob.sub
expect 1 job(s) submitted to cluster 13.
"""

SCENARIOS = {
    "local-submit": LOCAL_SUBMIT,
    "globus-job-run": GLOBUS_JOB_RUN,
    "grid-universe": GRID_UNIVERSE,
    "fig5": FIG5_CLUSTER_13,
    "fig11-14": GRID_UNIVERSE,
}

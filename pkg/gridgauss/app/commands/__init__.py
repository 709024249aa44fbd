from . import bench, condition, evaluate, fit, introspect, logprob, oracle_check, sample, synth

# Registration order is the order shown by --help
COMMANDS = (fit, sample, condition, logprob, introspect, synth, evaluate, oracle_check, bench)

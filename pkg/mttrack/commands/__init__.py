"""
Command handlers of the `mttrack` entry point, one module per command
"""
from mttrack.commands import bench, evaluate, selftest, synth, track, train

COMMANDS = (synth, train, track, evaluate, selftest, bench)

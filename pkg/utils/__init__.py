# Checkpoints, results store, report tables

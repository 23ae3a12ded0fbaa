# Workbench services: data, preprocessing, models, experiments

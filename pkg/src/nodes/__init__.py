# Pipeline stages

# Network Package
# Storage Package
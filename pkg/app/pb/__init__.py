# PB Package
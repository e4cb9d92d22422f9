# Engine Package
# Repository root on sys.path so `nopkit` and `db` import without installation.

from phreg.cli import main

raise SystemExit(main())
